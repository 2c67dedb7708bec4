//! Overlapping double covers of the rung set.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TssError};
use crate::models::RungGrid;

/// How the windows are laid out over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindowSpec {
    /// Windows listed as rung-index sets.
    Explicit { members: Vec<Vec<usize>> },
    /// Two staggered tilings of a linear grid: blocks of `size` starting at
    /// rung 0, then a first block of `overlap` rungs followed by blocks of
    /// `size`. `pattern(8, 4)` on 16 rungs gives
    /// {0..7}, {8..15}, {0..3}, {4..11}, {12..15}.
    Pattern { size: usize, overlap: usize },
    /// Two coincident full-range windows.
    FullDouble,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowLayout {
    members: Vec<Vec<usize>>,
    win: Vec<[usize; 2]>,
    overlap: Vec<Vec<bool>>,
    /// Position of rung k inside `members[j]`, if present.
    slot: Vec<Vec<Option<usize>>>,
}

pub fn build_layout(grid: &RungGrid, spec: &WindowSpec) -> Result<WindowLayout> {
    let k = grid.count();
    let members = match spec {
        WindowSpec::Explicit { members } => members.clone(),
        WindowSpec::FullDouble => vec![(0..k).collect(), (0..k).collect()],
        WindowSpec::Pattern { size, overlap } => {
            if *size == 0 || *overlap == 0 || *overlap >= *size {
                return Err(TssError::Config(format!(
                    "pattern needs 0 < overlap < size, got size={size}, overlap={overlap}"
                )));
            }
            let mut m = Vec::new();
            let mut start = 0;
            while start < k {
                m.push((start..(start + size).min(k)).collect());
                start += size;
            }
            m.push((0..(*overlap).min(k)).collect());
            let mut start = *overlap;
            while start < k {
                m.push((start..(start + size).min(k)).collect());
                start += size;
            }
            m
        }
    };
    WindowLayout::new(k, members)
}

impl WindowLayout {
    pub fn new(rungs: usize, members: Vec<Vec<usize>>) -> Result<Self> {
        let mut members = members;
        for (j, w) in members.iter_mut().enumerate() {
            if w.is_empty() {
                return Err(TssError::EmptyWindow(j));
            }
            w.sort_unstable();
            if let Some(&bad) = w.iter().find(|&&r| r >= rungs) {
                return Err(TssError::Domain(format!("window {j} lists rung {bad} outside 0..{rungs}")));
            }
            // A rung listed twice in one window would count twice towards coverage.
            if let Some(p) = w.windows(2).position(|p| p[0] == p[1]) {
                return Err(TssError::Coverage { rung: w[p], count: 3 });
            }
        }
        let mut owners: Vec<Vec<usize>> = vec![Vec::new(); rungs];
        for (j, w) in members.iter().enumerate() {
            for &r in w {
                owners[r].push(j);
            }
        }
        for (r, o) in owners.iter().enumerate() {
            if o.len() != 2 {
                return Err(TssError::Coverage { rung: r, count: o.len() });
            }
        }
        let win: Vec<[usize; 2]> = owners.iter().map(|o| [o[0], o[1]]).collect();
        let nw = members.len();
        let mut overlap = vec![vec![false; nw]; nw];
        for w in &win {
            overlap[w[0]][w[1]] = true;
            overlap[w[1]][w[0]] = true;
        }
        for (j, row) in overlap.iter_mut().enumerate() {
            row[j] = true;
        }
        let mut slot = vec![vec![None; rungs]; nw];
        for (j, w) in members.iter().enumerate() {
            for (i, &r) in w.iter().enumerate() {
                slot[j][r] = Some(i);
            }
        }
        let layout = WindowLayout { members, win, overlap, slot };
        if !layout.is_irreducible() {
            return Err(TssError::Irreducibility);
        }
        Ok(layout)
    }

    fn is_irreducible(&self) -> bool {
        let n = self.window_count();
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if self.overlap[u][v] && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn window_count(&self) -> usize {
        self.members.len()
    }

    pub fn rung_count(&self) -> usize {
        self.win.len()
    }

    pub fn members(&self, j: usize) -> &[usize] {
        &self.members[j]
    }

    pub fn win(&self, k: usize) -> [usize; 2] {
        self.win[k]
    }

    pub fn overlaps(&self, i: usize, j: usize) -> bool {
        self.overlap[i][j]
    }

    pub fn contains(&self, j: usize, k: usize) -> bool {
        self.slot[j][k].is_some()
    }

    /// Index of rung `k` within `members(j)`.
    pub fn slot(&self, j: usize, k: usize) -> Option<usize> {
        self.slot[j][k]
    }

    /// Rungs of `W_i ∩ W_j`.
    pub fn intersection(&self, i: usize, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.members[i].iter().copied().filter(move |&k| self.contains(j, k))
    }

    /// The element of `win(k)` other than `j`.
    pub fn other_window(&self, k: usize, j: usize) -> Result<usize> {
        let [a, b] = self.win[k];
        if j == a {
            Ok(b)
        } else if j == b {
            Ok(a)
        } else {
            Err(TssError::Domain(format!("window {j} does not contain rung {k}")))
        }
    }

    /// First window containing rung `k`.
    pub fn home_window(&self, k: usize) -> usize {
        self.win[k][0]
    }
}
