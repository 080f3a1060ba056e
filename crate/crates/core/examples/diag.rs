use qcdlab_core::harness::mde_hitting_estimator;
use qcdlab_core::harness::exact_cost_dp;
use qcdlab_core::presets;

fn main() {
    let m = presets::gaussian_unit_shift();
    let s = m.llr().unwrap();
    let law = presets::geometric_change(0.1);
    let plain = mde_hitting_estimator(&m, &s, 8.0, &law, 10_000, 99, false).unwrap();
    let tilted = mde_hitting_estimator(&m, &s, 8.0, &law, 10_000, 99, true).unwrap();
    println!("plain : mde {:.6e} se {:.6e}", plain.mde, plain.stderr);
    println!("tilted: mde {:.6e} se {:.6e}", tilted.mde, tilted.stderr);
    println!("ratio se: {:.2}", plain.stderr / tilted.stderr);

    // and cross-check agreement on the lattice fixture against the oracle
    let (m2, s2, law2) = (presets::two_symbol(), presets::two_symbol_lattice_statistic(), presets::geometric_change(0.1));
    let dp = exact_cost_dp(&m2, &s2, 3.0, 1.0, &law2, None).unwrap();
    let t2 = mde_hitting_estimator(&m2, &s2, 3.0, &law2, 40_000, 11, true).unwrap();
    println!("lattice: dp {:.6e} tilted {:.6e} +- {:.2e}", dp.mde, t2.mde, t2.stderr);
}
