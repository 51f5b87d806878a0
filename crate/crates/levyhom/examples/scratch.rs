// temporary parameter scan (not a deliverable)
use levyhom::cell_problem::{effective_diffusivity, solve_poisson};
use levyhom::drift::{build_drift, enhance, DriftSpec, TrigTerm};
use levyhom::fokker_planck::invariant_density;
use levyhom::levy_generator::{LevySymbol, SphericalMeasure};
use levyhom::sde_mc::{clt_statistics, simulate_paths, CltTolerances, SimConfig};
use levyhom::torus_spectral::SpectralGrid;

fn main() {
    let g = SpectralGrid::new(1, 64).unwrap();
    let measure = SphericalMeasure::standard_isotropic(1.5, 1).unwrap();
    let sym = LevySymbol::new(&measure, &g).unwrap();
    for amp in [0.8, 1.4] {
        let spec = DriftSpec::FourierList {
            d: 1,
            components: vec![vec![TrigTerm {
                k: vec![1],
                cos: 0.0,
                sin: amp,
            }]],
        };
        let f = build_drift(&spec, &g).unwrap();
        let drift = enhance(&f, &sym, -0.2, 2.0 * (-0.2) + 1.5 - 1.0).unwrap();
        let inv = invariant_density(&drift, &sym).unwrap();
        let chi = solve_poisson(&drift, &sym, &inv).unwrap();
        let model = effective_diffusivity(&chi, &inv, &sym).unwrap();
        for t_mac in [0.05, 0.1, 0.2] {
            for dt in [0.005, 0.0025] {
                let mut line = format!("amp {amp} t {t_mac} dt {dt}:");
                for n in [16.0f64, 64.0] {
                    let cfg = SimConfig {
                        level: None,
                        x0: vec![0.0],
                        horizon: n * t_mac,
                        dt,
                        paths: 100_000,
                        master_seed: 2025,
                        measure: measure.to_spec(),
                    };
                    let ens = simulate_paths(&cfg, &f).unwrap();
                    let rep =
                        clt_statistics(&ens, &model, n, &CltTolerances::default()).unwrap();
                    let last = rep.checks.last().unwrap();
                    let max_se = last.std_error.iter().fold(0.0f64, |a, &b| a.max(b));
                    line += &format!(
                        "  n{n}: err {:.4e} (4se {:.4e})",
                        rep.final_error(),
                        4.0 * max_se
                    );
                }
                println!("{line}");
            }
        }
    }
}
