//! Window layouts over a 16-rung grid: every rung sits in exactly two windows.

use tss::models::RungGrid;
use tss::windows::{build_layout, WindowSpec};

fn main() -> tss::Result<()> {
    let grid = RungGrid::linear(16)?;
    for spec in [WindowSpec::Pattern { size: 8, overlap: 4 }, WindowSpec::Pattern { size: 6, overlap: 3 }, WindowSpec::FullDouble] {
        let layout = build_layout(&grid, &spec)?;
        println!("{spec:?}");
        for j in 0..layout.window_count() {
            let m = layout.members(j);
            println!("  window {j}: rungs {}..={}", m[0], m[m.len() - 1]);
        }
        println!("  rung 5 lives in windows {:?}", layout.win(5));
    }
    Ok(())
}
