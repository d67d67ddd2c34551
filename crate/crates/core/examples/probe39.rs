fn main() {
    let g = gridflow::network::load_grid("crates/core/fixtures/ne39.grid").unwrap();
    println!("buses={} lines={} gens={}", g.n_buses(), g.n_lines(), g.n_gens());
    let inj = g.nominal_injections();
    println!("sum inj = {:.3e}", inj.iter().sum::<f64>());
    let eq = gridflow::network::solve_equilibrium(&g, &inj).unwrap();
    let mut flows: Vec<(f64, usize)> = eq.flows.iter().cloned().zip(0..).map(|(f, e)| (f.abs(), e)).collect();
    flows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for &(fabs, e) in flows.iter().take(12) {
        let l = &g.lines[e];
        println!("line {}-{}  flow {:+.4}  B {:.1}  angle {:+.4}", g.buses[l.from].id, g.buses[l.to].id, eq.flows[e], l.susceptance, eq.theta[l.from]-eq.theta[l.to]);
    }
    let maxang = g.lines.iter().map(|l| (eq.theta[l.from]-eq.theta[l.to]).abs()).fold(0.0f64, f64::max);
    println!("max |angle diff| = {:.4} rad", maxang);
}
