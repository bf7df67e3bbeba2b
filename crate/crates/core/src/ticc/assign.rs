//! Joint cluster assignment for r_w runs by dynamic programming over the
//! Cartesian product of per-run cluster choices.

use crate::{Error, Result};

/// Largest number of joint states (K^r_w) the DP accepts.
pub const MAX_JOINT_STATES: usize = 4096;

/// Negative log-likelihood of every (window, run, cluster) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct NegLogLikTable {
    n_windows: usize,
    n_runs: usize,
    k: usize,
    values: Vec<f64>,
}

impl NegLogLikTable {
    pub fn zeros(n_windows: usize, n_runs: usize, k: usize) -> Self {
        Self {
            n_windows,
            n_runs,
            k,
            values: vec![0.0; n_windows * n_runs * k],
        }
    }

    /// `f(t, r, k)` for window index `t`, run `r`, cluster `k` (all 0-based).
    pub fn from_fn(
        n_windows: usize,
        n_runs: usize,
        k: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut table = Self::zeros(n_windows, n_runs, k);
        for t in 0..n_windows {
            for r in 0..n_runs {
                for c in 0..k {
                    table.set(t, r, c, f(t, r, c));
                }
            }
        }
        table
    }

    fn idx(&self, t: usize, r: usize, c: usize) -> usize {
        (t * self.n_runs + r) * self.k + c
    }

    pub fn get(&self, t: usize, r: usize, c: usize) -> f64 {
        self.values[self.idx(t, r, c)]
    }

    pub fn set(&mut self, t: usize, r: usize, c: usize, v: f64) {
        let i = self.idx(t, r, c);
        self.values[i] = v;
    }

    pub fn n_windows(&self) -> usize {
        self.n_windows
    }

    pub fn n_runs(&self) -> usize {
        self.n_runs
    }

    pub fn n_clusters(&self) -> usize {
        self.k
    }
}

/// Switch penalties of the assignment problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchPenalty {
    /// Cost of a cluster change between consecutive windows of one run.
    pub beta: f64,
    /// Cost of a cluster disagreement between adjacent runs at one timestamp.
    pub alpha: f64,
}

/// Labels indexed `[run][window]`.
pub type Labels = Vec<Vec<usize>>;

/// Total assignment cost: Σ(−ℓℓ) + β·(within-run switches) + α·(adjacent-run disagreements).
pub fn assignment_cost(table: &NegLogLikTable, labels: &Labels, pen: SwitchPenalty) -> f64 {
    let mut cost = 0.0;
    for t in 0..table.n_windows {
        for r in 0..table.n_runs {
            let k = labels[r][t];
            cost += table.get(t, r, k);
            if t > 0 && labels[r][t - 1] != k {
                cost += pen.beta;
            }
            if r > 0 && labels[r - 1][t] != k {
                cost += pen.alpha;
            }
        }
    }
    cost
}

pub fn joint_state_count(k: usize, n_runs: usize) -> Result<usize> {
    let states = (k as u128).checked_pow(n_runs as u32).unwrap_or(u128::MAX);
    if states > MAX_JOINT_STATES as u128 {
        return Err(Error::Capacity {
            states,
            cap: MAX_JOINT_STATES,
        });
    }
    Ok(states as usize)
}

/// Minimum-cost joint assignment. Returns the optimal cost and the labels.
///
/// Each DP state is one combination of clusters across the runs. The
/// adjacent-run penalty depends only on the current combination, the
/// switch penalty on the (previous, current) pair, so each step scans
/// all K^{2·r_w} pairs. Ties resolve to the lowest state index.
pub fn assign_clusters(table: &NegLogLikTable, pen: SwitchPenalty) -> Result<(f64, Labels)> {
    let (n_windows, n_runs, k) = (table.n_windows, table.n_runs, table.k);
    if k == 0 || n_runs == 0 {
        return Err(Error::config("K", "need at least one cluster and one run"));
    }
    let states = joint_state_count(k, n_runs)?;
    if n_windows == 0 {
        return Ok((0.0, vec![Vec::new(); n_runs]));
    }

    let digits: Vec<Vec<usize>> = (0..states)
        .map(|mut s| {
            (0..n_runs)
                .map(|_| {
                    let d = s % k;
                    s /= k;
                    d
                })
                .collect()
        })
        .collect();
    let disagreements: Vec<f64> = digits
        .iter()
        .map(|d| d.windows(2).filter(|w| w[0] != w[1]).count() as f64)
        .collect();
    let switch_cost = |a: usize, b: usize| -> f64 {
        let n = digits[a].iter().zip(&digits[b]).filter(|(x, y)| x != y).count();
        n as f64 * pen.beta
    };
    let switch_table: Option<Vec<f64>> = (states * states <= 1 << 22).then(|| {
        (0..states * states)
            .map(|i| switch_cost(i / states, i % states))
            .collect()
    });

    let node_cost = |t: usize, s: usize| -> f64 {
        let mut c = pen.alpha * disagreements[s];
        for (r, &cl) in digits[s].iter().enumerate() {
            c += table.get(t, r, cl);
        }
        c
    };

    let mut prev: Vec<f64> = (0..states).map(|s| node_cost(0, s)).collect();
    let mut back: Vec<Vec<u32>> = Vec::with_capacity(n_windows.saturating_sub(1));
    let mut cur = vec![0.0; states];
    for t in 1..n_windows {
        let mut ptr = vec![0u32; states];
        for s in 0..states {
            let mut best = f64::INFINITY;
            let mut arg = 0usize;
            for (p, &pc) in prev.iter().enumerate() {
                let sw = match &switch_table {
                    Some(tab) => tab[p * states + s],
                    None => switch_cost(p, s),
                };
                let c = pc + sw;
                if c < best {
                    best = c;
                    arg = p;
                }
            }
            cur[s] = best + node_cost(t, s);
            ptr[s] = arg as u32;
        }
        back.push(ptr);
        std::mem::swap(&mut prev, &mut cur);
    }

    let (mut state, cost) = prev
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |acc, (s, &c)| if c < acc.1 { (s, c) } else { acc });
    let mut labels = vec![vec![0usize; n_windows]; n_runs];
    for t in (0..n_windows).rev() {
        for (r, l) in labels.iter_mut().enumerate() {
            l[t] = digits[state][r];
        }
        if t > 0 {
            state = back[t - 1][state] as usize;
        }
    }
    Ok((cost, labels))
}
