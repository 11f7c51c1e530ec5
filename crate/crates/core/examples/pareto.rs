//! Pareto flags over (lower FID, higher alignment score) for hand-made points.
//!
//!     cargo run --example pareto

use mmdit_align::metrics::{dominates, pareto_report, GridResult};

fn main() {
    let point = |label: &str, fid, score| GridResult {
        label: label.into(),
        fid,
        score,
    };
    let grid = [
        point("a", 1.0, 0.50),
        point("b", 0.8, 0.40),
        point("c", 1.2, 0.70),
        point("d", 1.1, 0.45),
        point("e", 0.8, 0.40),
    ];
    println!("a dominates d: {}", dominates(&grid[0], &grid[3]));
    println!("b dominates e: {}", dominates(&grid[1], &grid[4]));
    let report = pareto_report(&grid);
    print!("{}", report.to_table());
    print!("{}", report.to_csv());
}
