use gridflow::network::{load_grid, solve_equilibrium};

fn main() {
    let grid = load_grid("crates/core/fixtures/ne39.grid").unwrap();
    let pre = solve_equilibrium(&grid, &grid.nominal_injections()).unwrap();
    // AGC end state: loss of 7.35 at bus 38, uniform participation +0.735/gen.
    let mut inj = grid.nominal_injections();
    let bus38 = grid.bus_by_id(38).unwrap();
    inj[bus38] -= 7.35;
    for &b in grid.gen_buses() {
        inj[b] += 0.735;
    }
    let post = solve_equilibrium(&grid, &inj).unwrap();
    println!("{:<10} {:>9} {:>9} {:>8}", "line", "pre", "postAGC", "delta");
    let mut rows: Vec<(f64, String)> = grid
        .lines
        .iter()
        .enumerate()
        .map(|(e, l)| {
            let d = post.flows[e].abs() - pre.flows[e].abs();
            (
                d,
                format!(
                    "{:<10} {:>9.4} {:>9.4} {:>8.4}",
                    format!("{}-{}", grid.buses[l.from].id, grid.buses[l.to].id),
                    pre.flows[e],
                    post.flows[e],
                    d
                ),
            )
        })
        .collect();
    rows.sort_by(|a, b| b.0.total_cmp(&a.0));
    for (_, s) in rows.iter().take(10) {
        println!("{s}");
    }
}
