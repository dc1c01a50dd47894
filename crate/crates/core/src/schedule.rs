//! Budgeted parallel generation: transition costs, the `O(budget · D²)`
//! dynamic program, path extraction and an exhaustive oracle.
//!
//! States are counted in generated variables: state `i` means `i` variables
//! are known. Jumping from state `i` to `j > i` generates `j − i` variables
//! in one network call at a cost of `(j − i) · L[i]` bits, where `L[i]` is
//! the component of 1-based step `i + 1`.

use crate::error::{Error, Result};

/// Stand-in for infinity; additions saturate so no NaN can appear.
pub const INFEASIBLE: f64 = f64::MAX;

fn sat_add(a: f64, b: f64) -> f64 {
    if a == INFEASIBLE || b == INFEASIBLE {
        INFEASIBLE
    } else {
        (a + b).min(INFEASIBLE)
    }
}

/// `(D+1) × (D+1)` transition costs; zero on and below the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    size: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.data[from * self.size + to]
    }
}

pub fn build_cost_matrix(components: &[f64]) -> Result<CostMatrix> {
    if let Some((index, &value)) = components.iter().enumerate().find(|(_, v)| v.is_nan() || **v < 0.0) {
        return Err(Error::NegativeComponent { index, value });
    }
    let d = components.len();
    let size = d + 1;
    // Suffix sums over the rows of an upper-triangular mask give the jump
    // widths [[1 2 3] [0 1 2] [0 0 1]]; row i is scaled by L[i] and shifted
    // one column right so that entry (i, j) is the jump from state i to j.
    let mut widths = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            widths[i * d + j] = 1.0;
        }
    }
    for i in (0..d.saturating_sub(1)).rev() {
        for j in 0..d {
            widths[i * d + j] += widths[(i + 1) * d + j];
        }
    }
    let mut data = vec![0.0; size * size];
    for i in 0..d {
        for j in 0..d {
            data[i * size + j + 1] = components[i] * widths[i * d + j];
        }
    }
    Ok(CostMatrix { size, data })
}

/// Cost and predecessor tables of the dynamic program.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTables {
    /// `costs[k][t]`: least bits to reach state `t` in exactly `k` steps.
    pub costs: Vec<Vec<f64>>,
    /// `dims[k][t]`: predecessor state on that path; `-1` where infeasible.
    pub dims: Vec<Vec<i32>>,
}

/// Fills the tables up to `max_budget` steps. Ties go to the smaller
/// predecessor state.
pub fn dp_solve(cm: &CostMatrix, max_budget: usize) -> DpTables {
    let size = cm.size();
    let mut first = vec![INFEASIBLE; size];
    first[0] = 0.0;
    let mut costs = vec![first];
    let mut dims = vec![vec![-1; size]];
    for k in 1..=max_budget {
        let prev = &costs[k - 1];
        let mut row = vec![INFEASIBLE; size];
        let mut arg = vec![-1; size];
        for t in 1..size {
            let mut best = INFEASIBLE;
            let mut best_s = -1;
            for (s, &p) in prev.iter().enumerate().take(t) {
                if p == INFEASIBLE {
                    continue;
                }
                let c = sat_add(p, cm.get(s, t));
                if best_s < 0 || c < best {
                    best = c;
                    best_s = s as i32;
                }
            }
            row[t] = best;
            arg[t] = best_s;
        }
        costs.push(row);
        dims.push(arg);
    }
    DpTables { costs, dims }
}

/// A generation schedule: end states of each parallel step.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    steps: Vec<u32>,
    total_bits: f64,
}

impl Schedule {
    pub fn new(steps: Vec<u32>, total_bits: f64) -> Result<Self> {
        if steps.is_empty() || steps[0] == 0 || steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format(format!("schedule steps {steps:?} are not strictly increasing from 1")));
        }
        Ok(Self { steps, total_bits })
    }

    /// One variable per step.
    pub fn sequential(dims: usize) -> Self {
        Self { steps: (1..=dims as u32).collect(), total_bits: 0.0 }
    }

    pub fn steps(&self) -> &[u32] {
        &self.steps
    }

    pub fn budget(&self) -> usize {
        self.steps.len()
    }

    pub fn dims(&self) -> usize {
        *self.steps.last().unwrap() as usize
    }

    pub fn total_bits(&self) -> f64 {
        self.total_bits
    }

    /// `(start, end)` state pairs, one per network call.
    pub fn segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        std::iter::once(0).chain(self.steps.iter().map(|&s| s as usize)).zip(self.steps.iter().map(|&s| s as usize))
    }

    pub fn widths(&self) -> Vec<usize> {
        self.segments().map(|(a, b)| b - a).collect()
    }
}

/// `Σ (end − start) · L[start]` along the steps.
pub fn path_cost(components: &[f64], steps: &[u32]) -> f64 {
    let mut start = 0usize;
    let mut total = 0.0;
    for &end in steps {
        total += (end as usize - start) as f64 * components[start];
        start = end as usize;
    }
    total
}

/// Walks the predecessor table back from state `D`.
pub fn extract_path(budget: usize, tables: &DpTables) -> Result<Schedule> {
    let dims = tables.costs[0].len() - 1;
    if budget == 0 || budget >= tables.costs.len() || tables.costs[budget][dims] == INFEASIBLE {
        return Err(Error::InfeasibleBudget { budget, dims });
    }
    let mut steps = vec![0u32; budget];
    let mut t = dims;
    for k in (1..=budget).rev() {
        steps[k - 1] = t as u32;
        t = tables.dims[k][t] as usize;
    }
    debug_assert_eq!(t, 0);
    Schedule::new(steps, tables.costs[budget][dims])
}

/// Cost matrix, DP and path for one budget.
pub fn plan(components: &[f64], budget: usize) -> Result<Schedule> {
    let d = components.len();
    if budget == 0 || budget > d {
        return Err(Error::InfeasibleBudget { budget, dims: d });
    }
    let cm = build_cost_matrix(components)?;
    extract_path(budget, &dp_solve(&cm, budget))
}

/// Descending sort within each segment delimited by `stage_bounds`
/// (segment start offsets, excluding 0). Stable.
pub fn sort_components(components: &[f64], stage_bounds: &[usize]) -> Vec<f64> {
    let mut out = components.to_vec();
    let mut edges = vec![0];
    edges.extend(stage_bounds.iter().copied().filter(|&b| b > 0 && b < components.len()));
    edges.push(components.len());
    edges.dedup();
    for w in edges.windows(2) {
        out[w[0]..w[1]].sort_by(|a, b| b.total_cmp(a));
    }
    out
}

/// One schedule per stage from stage-major components, each planned on its
/// stage's sorted components with the same budget.
pub fn plan_stages(components: &[f64], stages: usize, budget: usize) -> Result<Vec<Schedule>> {
    if stages == 0 || !components.len().is_multiple_of(stages) {
        return Err(Error::Shape(format!("{} components for {stages} stages", components.len())));
    }
    let d = components.len() / stages;
    components.chunks(d).map(|stage| plan(&sort_components(stage, &[]), budget)).collect()
}

/// Largest `D` the exhaustive oracle accepts.
pub const MAX_BRUTE_FORCE_DIMS: usize = 16;

/// Enumerates all `C(D−1, budget−1)` schedules and keeps the cheapest;
/// the first one found wins ties.
pub fn brute_force_schedule(components: &[f64], budget: usize) -> Result<Schedule> {
    let d = components.len();
    if d > MAX_BRUTE_FORCE_DIMS {
        return Err(Error::TooLarge(format!("brute force needs D ≤ {MAX_BRUTE_FORCE_DIMS}, got {d}")));
    }
    if budget == 0 || budget > d {
        return Err(Error::InfeasibleBudget { budget, dims: d });
    }
    let mut best: Option<(f64, Vec<u32>)> = None;
    // intermediate end states are a (budget−1)-subset of 1..D−1
    for bits in 0u32..(1u32 << (d - 1)) {
        if bits.count_ones() as usize != budget - 1 {
            continue;
        }
        let mut steps: Vec<u32> = (1..d as u32).filter(|&s| bits & (1 << (s - 1)) != 0).collect();
        steps.push(d as u32);
        let cost = path_cost(components, &steps);
        if best.as_ref().is_none_or(|(c, _)| cost < *c) {
            best = Some((cost, steps));
        }
    }
    let (cost, steps) = best.expect("at least one schedule");
    Schedule::new(steps, cost)
}
