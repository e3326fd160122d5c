//! DIRECT (DIviding RECTangles) derivative-free global maximization over a
//! box. Used to certify worst-case errors, find acquisition points and
//! compute scaling factors.
//!
//! The box is normalized to the unit cube and trisected along longest sides;
//! potentially optimal rectangles are selected with the standard
//! lower-convex-hull criterion and an epsilon improvement condition relative
//! to the incumbent. The algorithm is fully deterministic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::Hyperbox;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectConfig {
    /// Evaluation budget; `None` means 2000 * dimension.
    pub max_evals: Option<usize>,
    pub max_iters: usize,
    /// Potential-optimality slack relative to the incumbent.
    pub epsilon: f64,
    /// Finish with a short shrinking coordinate search around the incumbent.
    pub local_polish: bool,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            max_evals: None,
            max_iters: 100_000,
            epsilon: 1e-4,
            local_polish: true,
        }
    }
}

impl DirectConfig {
    pub fn with_budget(max_evals: usize) -> Self {
        Self {
            max_evals: Some(max_evals),
            ..Default::default()
        }
    }

    pub fn budget_for(&self, dim: usize) -> usize {
        self.max_evals.unwrap_or(2000 * dim).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalResult {
    pub x_star: Vec<f64>,
    pub value_star: f64,
    pub evals_used: usize,
    /// Incumbent improvements as (evaluation count, value).
    pub history: Vec<(usize, f64)>,
    /// Number of probed points whose objective was non-finite.
    pub non_finite_evals: usize,
}

struct Rect {
    /// Center in unit coordinates over the free dimensions.
    center: Vec<f64>,
    /// Per-free-dimension trisection depth; side length is 3^-level.
    levels: Vec<u32>,
    value: f64,
    id: usize,
}

impl Rect {
    fn size(&self) -> f64 {
        0.5 * self
            .levels
            .iter()
            .map(|l| 3.0f64.powi(-2 * (*l as i32)))
            .sum::<f64>()
            .sqrt()
    }
}

struct Problem<'a, F: Fn(&[f64]) -> f64 + Sync> {
    objective: &'a F,
    bx: &'a Hyperbox,
    free: Vec<usize>,
}

impl<'a, F: Fn(&[f64]) -> f64 + Sync> Problem<'a, F> {
    fn to_original(&self, unit: &[f64]) -> Vec<f64> {
        let mut x = self.bx.lower.clone();
        for (j, &d) in self.free.iter().enumerate() {
            x[d] = self.bx.lower[d] + unit[j] * self.bx.width(d);
        }
        x
    }

    /// Internal minimization value: negated objective, non-finite mapped to
    /// +inf so it can never become the incumbent.
    fn eval_min(&self, unit: &[f64]) -> (f64, bool) {
        let x = self.to_original(unit);
        let v = (self.objective)(&x);
        if v.is_finite() {
            (-v, false)
        } else {
            (f64::INFINITY, true)
        }
    }
}

/// Maximizes the objective over the box. Zero-width dimensions are frozen at
/// their single value; if every dimension is frozen the single point is
/// returned.
pub fn maximize<F>(objective: &F, bx: &Hyperbox, cfg: &DirectConfig) -> Result<GlobalResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let free: Vec<usize> = (0..bx.dim()).filter(|d| !bx.is_frozen(*d)).collect();
    let prob = Problem {
        objective,
        bx,
        free,
    };

    if prob.free.is_empty() {
        let x = bx.lower.clone();
        let v = objective(&x);
        let non_finite = usize::from(!v.is_finite());
        return Ok(GlobalResult {
            x_star: x,
            value_star: if v.is_finite() { v } else { f64::NEG_INFINITY },
            evals_used: 1,
            history: vec![(1, v)],
            non_finite_evals: non_finite,
        });
    }

    let nf = prob.free.len();
    let budget = cfg.budget_for(nf);
    let mut evals = 0usize;
    let mut non_finite = 0usize;
    let mut history: Vec<(usize, f64)> = Vec::new();

    let center = vec![0.5; nf];
    let (v0, bad) = prob.eval_min(&center);
    evals += 1;
    non_finite += usize::from(bad);
    let mut rects = vec![Rect {
        center: center.clone(),
        levels: vec![0; nf],
        value: v0,
        id: 0,
    }];
    let mut next_id = 1usize;
    let mut best_value = v0;
    let mut best_center = center;
    history.push((evals, -best_value));

    let mut iter = 0usize;
    'outer: while evals < budget && iter < cfg.max_iters {
        iter += 1;
        let selected = potentially_optimal(&rects, best_value, cfg.epsilon);
        if selected.is_empty() {
            break;
        }
        for rect_idx in selected {
            let min_level = *rects[rect_idx].levels.iter().min().unwrap();
            let long_dims: Vec<usize> = rects[rect_idx]
                .levels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == min_level)
                .map(|(j, _)| j)
                .collect();
            if evals + 2 * long_dims.len() > budget {
                break 'outer;
            }
            let delta = 3.0f64.powi(-(min_level as i32 + 1));

            // Probe c +- delta e_j for each longest dimension, in parallel.
            let parent_center = rects[rect_idx].center.clone();
            let probes: Vec<Vec<f64>> = long_dims
                .iter()
                .flat_map(|&j| {
                    let mut plus = parent_center.clone();
                    plus[j] += delta;
                    let mut minus = parent_center.clone();
                    minus[j] -= delta;
                    [plus, minus]
                })
                .collect();
            let values: Vec<(f64, bool)> =
                probes.par_iter().map(|p| prob.eval_min(p)).collect();
            evals += values.len();
            non_finite += values.iter().filter(|(_, b)| *b).count();

            // Order dimensions by their best probe value.
            let mut order: Vec<(f64, usize, usize)> = long_dims
                .iter()
                .enumerate()
                .map(|(k, &j)| {
                    let w = values[2 * k].0.min(values[2 * k + 1].0);
                    (w, j, k)
                })
                .collect();
            order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

            // Split best dimension first; accumulated level bumps apply to
            // every child created afterwards.
            let mut bumped: Vec<usize> = Vec::new();
            for &(_, j, k) in &order {
                bumped.push(j);
                for (offset, value_idx) in [(delta, 2 * k), (-delta, 2 * k + 1)] {
                    let mut c = parent_center.clone();
                    c[j] += offset;
                    let mut levels = rects[rect_idx].levels.clone();
                    for &bj in &bumped {
                        levels[bj] += 1;
                    }
                    let (v, _) = values[value_idx];
                    if v < best_value {
                        best_value = v;
                        best_center = c.clone();
                        history.push((evals, -best_value));
                    }
                    rects.push(Rect {
                        center: c,
                        levels,
                        value: v,
                        id: next_id,
                    });
                    next_id += 1;
                }
            }
            // The parent keeps its center and becomes the central piece.
            for &bj in &bumped {
                rects[rect_idx].levels[bj] += 1;
            }
        }
    }

    let mut x_star = prob.to_original(&best_center);
    let mut value_star = -best_value;

    if cfg.local_polish && value_star.is_finite() {
        let (polished, extra, improvements) =
            coordinate_polish(objective, bx, &x_star, value_star, evals);
        x_star = polished.0;
        value_star = polished.1;
        evals += extra;
        history.extend(improvements);
    }

    Ok(GlobalResult {
        x_star,
        value_star,
        evals_used: evals,
        history,
        non_finite_evals: non_finite,
    })
}

/// Standard potential-optimality test on the (size, value) groups: keeps the
/// best rectangle of each distinct size, then applies the pairwise slope
/// conditions and the epsilon improvement condition. Returns rectangle
/// indices; falls back to the largest group's best rectangle so the search
/// can never stall.
fn potentially_optimal(rects: &[Rect], incumbent: f64, epsilon: f64) -> Vec<usize> {
    use std::collections::HashMap;
    let mut groups: HashMap<u64, usize> = HashMap::new();
    for (idx, r) in rects.iter().enumerate() {
        let d = r.size();
        let key = d.to_bits();
        match groups.entry(key) {
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(idx);
            }
            std::collections::hash_map::Entry::Occupied(mut e) => {
                let cur = &rects[*e.get()];
                if (r.value, r.id) < (cur.value, cur.id) {
                    e.insert(idx);
                }
            }
        }
    }
    let mut sorted: Vec<(f64, usize)> = groups
        .into_iter()
        .map(|(bits, idx)| (f64::from_bits(bits), idx))
        .collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut selected = Vec::new();
    let m = sorted.len();
    for j in 0..m {
        let (dj, idxj) = sorted[j];
        let fj = rects[idxj].value;
        if !fj.is_finite() {
            continue;
        }
        let mut l_max = f64::NEG_INFINITY;
        for &(di, idxi) in &sorted[..j] {
            let fi = rects[idxi].value;
            if fi.is_finite() {
                l_max = l_max.max((fj - fi) / (dj - di));
            }
        }
        let mut r_min = f64::INFINITY;
        for &(di, idxi) in &sorted[j + 1..] {
            let fi = rects[idxi].value;
            if fi.is_finite() {
                r_min = r_min.min((fi - fj) / (di - dj));
            }
        }
        if l_max > r_min + 1e-13 {
            continue;
        }
        if r_min.is_finite() {
            let reach = fj - r_min * dj;
            let target = if incumbent != 0.0 {
                incumbent - epsilon * incumbent.abs()
            } else {
                0.0
            };
            if reach > target {
                continue;
            }
        }
        selected.push(idxj);
    }
    if selected.is_empty() {
        if let Some(&(_, idx)) = sorted.last() {
            selected.push(idx);
        }
    }
    selected
}

type PolishOutcome = ((Vec<f64>, f64), usize, Vec<(usize, f64)>);

/// 50-sweep shrinking coordinate search around the incumbent; steps are
/// halved whenever a full sweep fails to improve.
fn coordinate_polish<F>(
    objective: &F,
    bx: &Hyperbox,
    x0: &[f64],
    v0: f64,
    evals_before: usize,
) -> PolishOutcome
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut x = x0.to_vec();
    let mut best = v0;
    let mut steps: Vec<f64> = (0..bx.dim()).map(|d| bx.width(d) / 20.0).collect();
    let mut extra = 0usize;
    let mut improvements = Vec::new();
    for _sweep in 0..50 {
        let mut improved = false;
        for d in 0..bx.dim() {
            if bx.is_frozen(d) {
                continue;
            }
            for sign in [1.0, -1.0] {
                let mut xt = x.clone();
                xt[d] = (xt[d] + sign * steps[d]).clamp(bx.lower[d], bx.upper[d]);
                if xt[d] == x[d] {
                    continue;
                }
                let v = objective(&xt);
                extra += 1;
                if v.is_finite() && v > best {
                    best = v;
                    x = xt;
                    improved = true;
                    improvements.push((evals_before + extra, best));
                }
            }
        }
        if !improved {
            steps.iter_mut().for_each(|s| *s *= 0.5);
        }
    }
    ((x, best), extra, improvements)
}
