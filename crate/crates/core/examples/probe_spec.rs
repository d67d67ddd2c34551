use gridflow::controller::{ControllerConfig, ControllerKind};
use gridflow::dynamics::{ClosedLoop, TurbineModelKind};
use gridflow::network::{load_grid, solve_equilibrium};
use gridflow::stability::{eigenvalues, linearize, ActiveSet, EquilibriumPoint};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let path = args.get(1).map(|s| s.as_str()).unwrap_or("crates/core/fixtures/ne39.grid");
    let kind = match args.get(2).map(|s| s.as_str()).unwrap_or("uc") {
        "duc" => ControllerKind::Duc,
        "agc" => ControllerKind::Agc,
        "droop" => ControllerKind::Droop,
        _ => ControllerKind::Uc,
    };
    let scale: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let grid = load_grid(path).unwrap();
    let eqn = solve_equilibrium(&grid, &grid.nominal_injections()).unwrap();
    let mut cfg = ControllerConfig::new(&grid, kind);
    cfg.k_lambda = vec![0.0477 * scale; grid.n_buses()];
    cfg.k_phi = vec![37.6991 * scale; grid.n_buses()];
    cfg.k_rho_plus = vec![0.0013 * scale; grid.n_lines()];
    cfg.k_rho_minus = vec![0.0013 * scale; grid.n_lines()];
    let turbine = TurbineModelKind::SecondOrder;
    let loop_ = ClosedLoop::new(&grid, &cfg, turbine);
    let (phys, ctrl) = loop_.initial_state(&eqn.theta);
    let eq = EquilibriumPoint { phys, ctrl, r: vec![0.0; grid.n_buses()] };
    let active = ActiveSet::all_inactive(&grid);
    let model = linearize(&grid, &cfg, turbine, &eq, &active).unwrap();
    let rep = eigenvalues(&model).unwrap();
    let mut eigs = rep.eigenvalues.clone();
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re));
    println!("{} scale {scale}: abscissa {:+.4e}", kind.as_str(), rep.spectral_abscissa);
    for c in eigs.iter().take(14) {
        println!("  {:+.5e} {:+.4}i   (freq {:.2} rad/s)", c.re, c.im, c.im.abs());
    }
}
