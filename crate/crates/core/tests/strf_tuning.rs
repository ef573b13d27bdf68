use cortinv::cortical::{cortical_transform, default_strf_bank, ripple_stimulus, Direction};

#[test]
fn every_grid_point_is_tuned() {
    let bank = default_strf_bank();
    let mut failures = Vec::new();
    for (si, &scale) in bank.scales.iter().enumerate() {
        for (ri, &rate) in bank.rates.iter().enumerate() {
            for dir in [Direction::Downward, Direction::Upward] {
                let sp = ripple_stimulus(rate, scale, dir, 2.0, 0.9).unwrap();
                let c = cortical_transform(&sp, &bank).unwrap();
                let means = c.channel_means();
                let best = (0..means.len())
                    .max_by(|a, b| means[*a].partial_cmp(&means[*b]).unwrap())
                    .unwrap();
                let nr = bank.n_signed_rates();
                let want = si * nr + bank.rate_index(ri, dir);
                let mirrored = si * nr + bank.rate_index(ri, dir.mirrored());
                let ratio = means[want] / means[mirrored];
                println!("s={scale} r={rate} {dir:?}: best={best} want={want} ratio={ratio:.1}");
                if best != want || ratio < 2.0 {
                    failures.push((scale, rate, dir));
                }
            }
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn scaling_is_linear() {
    let bank = default_strf_bank();
    let sp = ripple_stimulus(8.0, 2.0, Direction::Upward, 0.5, 0.5).unwrap();
    let mut sp3 = sp.clone();
    sp3.frames.iter_mut().for_each(|v| *v *= 3.0);
    let a = cortical_transform(&sp, &bank).unwrap();
    let b = cortical_transform(&sp3, &bank).unwrap();
    for (x, y) in a.data.iter().zip(&b.data) {
        assert!((3.0 * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
    }
    assert!(a.data.iter().all(|v| v.is_finite() && *v >= 0.0));
}
