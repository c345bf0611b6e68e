use kmswkg_core::diagnostics::*;
use kmswkg_core::nonlinearity::{CubicTensor, SystemSpec};
use kmswkg_core::simulator::*;

#[test]
fn probe_three_level_orders() {
    let spec = SystemSpec::new(1, vec![1.0, 0.0], CubicTensor::new(), Vec::new()).unwrap();
    let comp = ComponentData { f: RadialProfile::Bump { scale: 1.0, power: 8 }, g: RadialProfile::Zero };
    let data = InitialData { components: vec![comp; 2], support_radius: 2.0, epsilon: 0.8 };
    let residuals = |h: f64| {
        let grid = GridConfig { mode: Mode::Radial, h, dt: 0.4 * h, t_max: 1.0, domain_radius: 5.0 };
        let mut rec = TripleRecorder::at_times(&grid, &[1.0]);
        run(&spec, &grid, &data, &mut [&mut rec]).unwrap();
        let [a, b, c] = &rec.triples[0];
        (
            gamma_commutator_residual(&spec, a, b, c, 1, Vf::L1).unwrap(),
            gamma_commutator_residual(&spec, a, b, c, 0, Vf::Dt).unwrap(),
        )
    };
    let hs = [0.1, 0.05, 0.025];
    let vals: Vec<(f64, f64)> = hs.iter().map(|&h| residuals(h)).collect();
    for (i, (l1, dt)) in vals.iter().enumerate() {
        println!("h={} L1={l1:.6e} Dt={dt:.6e}", hs[i]);
    }
    for k in 0..2 {
        let ol = (vals[k].0 / vals[k + 1].0).log2();
        let od = (vals[k].1 / vals[k + 1].1).log2();
        println!("pair {k}: L1 order {ol:.3}  Dt order {od:.3}");
    }
}
