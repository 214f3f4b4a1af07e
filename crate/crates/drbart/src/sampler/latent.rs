//! Per-observation latent-coordinate updates.
//!
//! At fixed covariates every tree is a step function of u on [0, 1), so
//! the sum of both ensembles is too. Each update merges the latent
//! cutpoints of the trees that actually vary along u at x_i into one
//! partition of [0, 1), carries running mean/log-scale sums across the
//! intervals, and marks which intervals are feasible — an interval is
//! infeasible when landing in it would pull the observation out of a leaf
//! that sits exactly at the minimum-occupancy floor.
//!
//! Two exact kernels share that machinery. The Gibbs kernel draws an
//! interval with probability proportional to its length times the
//! observation's Gaussian likelihood there, then a uniform position
//! inside it. The slice kernel draws a level under the current
//! likelihood, takes the union of feasible intervals whose likelihood
//! clears the level, and picks a point uniformly from that union by
//! length. Trees with no latent cutpoint on the observation's covariate
//! path contribute constants and can never change assignment, so the
//! common no-active-tree case collapses to a plain uniform redraw.
//!
//! A third kernel, the pairwise exchange pass, swaps the latent
//! coordinates of two observations in one Metropolis step. Both
//! single-coordinate kernels respect the occupancy floor one move at a
//! time, which traps them whenever every reachable rearrangement passes
//! through an infeasible intermediate — most visibly in which
//! observation holds an extreme latent position. An exchange jumps
//! straight between such arrangements, and when the two rows trade
//! places inside the same leaves the occupancy never changes at all.

use super::{ActiveTree, ChainConfig, ModelState, MoveStats, SamplerError, Scratch};
use crate::data::StandardizedData;
use crate::special::log_normal_pdf;
use crate::tree::{Point, Tree};
use rand::Rng;

/// Exact conditional draw of u_i over the interval partition.
pub fn latent_update_gibbs<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    i: usize,
    rng: &mut R,
    stats: &mut MoveStats,
) -> Result<(), SamplerError> {
    latent_update(state, data, cfg, i, rng, stats, false)
}

/// Exact slice move for u_i over the interval partition.
pub fn latent_update_slice<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    i: usize,
    rng: &mut R,
    stats: &mut MoveStats,
) -> Result<(), SamplerError> {
    latent_update(state, data, cfg, i, rng, stats, true)
}

fn tree_of<'a>(state: &'a ModelState, a: &ActiveTree) -> &'a Tree {
    if a.is_var {
        &state.var.trees[a.index as usize]
    } else {
        &state.mean.trees[a.index as usize]
    }
}

/// Collect the latent cutpoints and leaf sequences of every tree that
/// varies along u at x_i; sum the trees that do not into constants.
/// Returns (constant mean part, constant log-scale part).
fn collect_active(
    state: &ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    i: usize,
    scr: &mut Scratch,
) -> (f64, f64) {
    scr.cut_vals.clear();
    scr.cut_slots.clear();
    scr.step_ids.clear();
    scr.active.clear();
    let x = &data.x[i];
    let mut f_const = 0.0;
    let mut v_const = 0.0;
    for (h, t) in state.mean.trees.iter().enumerate() {
        push_tree(
            t,
            x,
            h,
            false,
            state.mean_assign[h][i],
            &state.mean_counts[h],
            cfg,
            scr,
            &mut f_const,
        );
    }
    for (h, t) in state.var.trees.iter().enumerate() {
        push_tree(
            t,
            x,
            h,
            true,
            state.var_assign[h][i],
            &state.var_counts[h],
            cfg,
            scr,
            &mut v_const,
        );
    }
    (f_const, v_const)
}

#[allow(clippy::too_many_arguments)]
fn push_tree(
    t: &Tree,
    x: &[f64],
    h: usize,
    is_var: bool,
    from: u32,
    counts: &[u32],
    cfg: &ChainConfig,
    scr: &mut Scratch,
    const_acc: &mut f64,
) {
    let c0 = scr.cut_vals.len();
    let i0 = scr.step_ids.len();
    t.u_steps_into(x, &mut scr.cut_vals, &mut scr.step_ids);
    if scr.cut_vals.len() == c0 {
        // constant along u at these covariates: assignment can never change
        *const_acc += t.value_at(scr.step_ids[i0]);
        scr.step_ids.truncate(i0);
        return;
    }
    let slot = scr.active.len() as u32;
    for _ in c0..scr.cut_vals.len() {
        scr.cut_slots.push(slot);
    }
    scr.active.push(ActiveTree {
        is_var,
        index: h as u32,
        cut_start: c0 as u32,
        cut_end: scr.cut_vals.len() as u32,
        id_start: i0 as u32,
        from,
        pinned: cfg.hp.min_leaf > 0 && (counts[from as usize] as usize) <= cfg.hp.min_leaf,
        cursor: 0,
    });
}

/// Merge the active trees' cutpoints into one sorted partition with
/// per-interval running sums and feasibility flags. Fills scr.bounds
/// (K + 1 edges), scr.f_run / scr.v_run / scr.feas (K intervals).
fn merge_profile(state: &ModelState, scr: &mut Scratch, f_const: f64, v_const: f64) {
    let ncuts = scr.cut_vals.len();
    scr.order.clear();
    scr.order.extend(0..ncuts as u32);
    {
        let Scratch { ref mut order, ref cut_vals, .. } = *scr;
        order.sort_unstable_by(|&a, &b| {
            cut_vals[a as usize]
                .partial_cmp(&cut_vals[b as usize])
                .expect("cutpoints are finite")
        });
    }
    scr.bounds.clear();
    scr.f_run.clear();
    scr.v_run.clear();
    scr.feas.clear();
    let mut f = f_const;
    let mut v = v_const;
    let mut bad = 0i32;
    for idx in 0..scr.active.len() {
        let a = scr.active[idx];
        let id0 = scr.step_ids[a.id_start as usize];
        let val = tree_of(state, &a).value_at(id0);
        if a.is_var {
            v += val;
        } else {
            f += val;
        }
        if a.pinned && id0 != a.from {
            bad += 1;
        }
        scr.active[idx].cursor = 0;
    }
    scr.bounds.push(0.0);
    scr.f_run.push(f);
    scr.v_run.push(v);
    scr.feas.push(bad == 0);
    for oi in 0..ncuts {
        let ci = scr.order[oi] as usize;
        let cut = scr.cut_vals[ci];
        let slot = scr.cut_slots[ci] as usize;
        let a = scr.active[slot];
        let t = tree_of(state, &a);
        let old_id = scr.step_ids[(a.id_start + a.cursor) as usize];
        let new_id = scr.step_ids[(a.id_start + a.cursor + 1) as usize];
        let delta = t.value_at(new_id) - t.value_at(old_id);
        if a.is_var {
            v += delta;
        } else {
            f += delta;
        }
        if a.pinned {
            if old_id == a.from {
                bad += 1;
            }
            if new_id == a.from {
                bad -= 1;
            }
        }
        scr.active[slot].cursor += 1;
        scr.bounds.push(cut);
        scr.f_run.push(f);
        scr.v_run.push(v);
        scr.feas.push(bad == 0);
    }
    scr.bounds.push(1.0);
}

fn latent_update<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    i: usize,
    rng: &mut R,
    stats: &mut MoveStats,
    slice: bool,
) -> Result<(), SamplerError> {
    stats.latent_updates += 1;
    let mut scr = std::mem::take(&mut state.scratch);
    let (f_const, v_const) = collect_active(state, data, cfg, i, &mut scr);
    if scr.active.is_empty() {
        // nothing varies with u at x_i and nothing constrains it: the
        // conditional is uniform for both kernels
        state.u[i] = rng.gen::<f64>();
        state.scratch = scr;
        return Ok(());
    }
    merge_profile(state, &mut scr, f_const, v_const);
    let kk = scr.f_run.len();
    let ln_s0 = state.sigma0_sq.ln();
    let sd_at = |v: f64| (0.5 * (ln_s0 + v)).exp();
    let y = data.y[i];
    let cur_bin = scr.bounds.partition_point(|&b| b <= state.u[i]) - 1;
    debug_assert!(scr.feas[cur_bin], "current latent position must be feasible");
    let chosen: usize;
    let mut u_new: f64;
    if !slice {
        // categorical over intervals: length times likelihood, in log space
        scr.weights.clear();
        let mut best = f64::NEG_INFINITY;
        for k in 0..kk {
            let len = scr.bounds[k + 1] - scr.bounds[k];
            let lw = if scr.feas[k] && len > 0.0 {
                len.ln() + log_normal_pdf(y, scr.f_run[k], sd_at(scr.v_run[k]))
            } else {
                f64::NEG_INFINITY
            };
            if lw > best {
                best = lw;
            }
            scr.weights.push(lw);
        }
        let mut total = 0.0;
        for w in scr.weights.iter_mut() {
            *w = (*w - best).exp();
            total += *w;
        }
        debug_assert!(total > 0.0, "the current interval always has positive mass");
        let r = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = kk - 1;
        for (k, &w) in scr.weights.iter().enumerate() {
            acc += w;
            if r < acc {
                pick = k;
                break;
            }
        }
        chosen = pick;
        let (lo, hi) = (scr.bounds[chosen], scr.bounds[chosen + 1]);
        u_new = lo + (hi - lo) * rng.gen::<f64>();
        if u_new >= hi {
            u_new = lo; // rounding guard: lo always lies in [lo, hi)
        }
    } else {
        // slice: level under the current likelihood, then uniform over the
        // union of feasible intervals clearing it
        let lw_cur = log_normal_pdf(y, scr.f_run[cur_bin], sd_at(scr.v_run[cur_bin]));
        let level = lw_cur + rng.gen::<f64>().ln();
        scr.weights.clear(); // reused as qualifying lengths
        let mut total_len = 0.0;
        for k in 0..kk {
            let len = scr.bounds[k + 1] - scr.bounds[k];
            let qualifies = scr.feas[k]
                && len > 0.0
                && log_normal_pdf(y, scr.f_run[k], sd_at(scr.v_run[k])) > level;
            let l = if qualifies { len } else { 0.0 };
            total_len += l;
            scr.weights.push(l);
        }
        if total_len <= 0.0 {
            // can only happen through floating pathologies; keep the state
            stats.latent_stuck += 1;
            state.scratch = scr;
            return Ok(());
        }
        let r = rng.gen::<f64>() * total_len;
        let mut acc = 0.0;
        let mut pick = kk - 1;
        let mut rem = 0.0;
        for (k, &l) in scr.weights.iter().enumerate() {
            if l > 0.0 && r < acc + l {
                pick = k;
                rem = r - acc;
                break;
            }
            acc += l;
        }
        chosen = pick;
        let (lo, hi) = (scr.bounds[chosen], scr.bounds[chosen + 1]);
        u_new = lo + rem;
        if u_new >= hi {
            u_new = lo;
        }
    }
    // commit: position, fitted caches, and per-tree assignments/occupancy
    state.u[i] = u_new;
    state.f_total[i] = scr.f_run[chosen];
    state.v_total[i] = scr.v_run[chosen];
    state.log_w[i] = -state.v_total[i] - ln_s0;
    state.w[i] = state.log_w[i].exp();
    for a in scr.active.iter() {
        let cuts = &scr.cut_vals[a.cut_start as usize..a.cut_end as usize];
        let bin = cuts.partition_point(|&c| c <= u_new);
        let to = scr.step_ids[a.id_start as usize + bin];
        if to != a.from {
            let (assign, counts) = if a.is_var {
                (
                    &mut state.var_assign[a.index as usize],
                    &mut state.var_counts[a.index as usize],
                )
            } else {
                (
                    &mut state.mean_assign[a.index as usize],
                    &mut state.mean_counts[a.index as usize],
                )
            };
            counts[a.from as usize] -= 1;
            counts[to as usize] += 1;
            assign[i] = to;
        }
    }
    state.scratch = scr;
    Ok(())
}

/// One pass of pairwise latent exchanges: each observation in turn
/// proposes to swap coordinates with a uniformly chosen partner. The
/// latent prior is uniform and the pair choice ignores the current
/// values, so the proposal is symmetric and the acceptance ratio is the
/// two rows' likelihood ratio alone.
pub fn latent_swap_pass<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    rng: &mut R,
    stats: &mut MoveStats,
) -> Result<(), SamplerError> {
    let n = data.n();
    if n < 2 {
        return Ok(());
    }
    for i in 0..n {
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        stats.latent_swap_proposed += 1;
        if try_swap(state, data, cfg, i, j, rng)? {
            stats.latent_swap_accepted += 1;
        }
    }
    Ok(())
}

/// Propose exchanging u_i and u_j. Rejected outright when any leaf of any
/// tree would drop below the occupancy floor under the combined
/// reassignment of the two rows.
fn try_swap<R: Rng + ?Sized>(
    state: &mut ModelState,
    data: &StandardizedData,
    cfg: &ChainConfig,
    i: usize,
    j: usize,
    rng: &mut R,
) -> Result<bool, SamplerError> {
    let (ui, uj) = (state.u[i], state.u[j]);
    if ui == uj {
        return Ok(false);
    }
    let pi = Point { x: &data.x[i], u: uj };
    let pj = Point { x: &data.x[j], u: ui };
    let floor = cfg.hp.min_leaf as i64;
    let mut scr = std::mem::take(&mut state.scratch);
    scr.swap_dest_i.clear();
    scr.swap_dest_j.clear();
    let (mut f_i, mut f_j) = (0.0, 0.0);
    let (mut v_i, mut v_j) = (0.0, 0.0);
    let mut feasible = true;
    'outer: for (ens, assign, counts, is_var) in [
        (&state.mean, &state.mean_assign, &state.mean_counts, false),
        (&state.var, &state.var_assign, &state.var_counts, true),
    ] {
        for (h, tree) in ens.trees.iter().enumerate() {
            let bi = tree.leaf_index(pi).map_err(|e| SamplerError::Math(e.to_string()))?;
            let bj = tree.leaf_index(pj).map_err(|e| SamplerError::Math(e.to_string()))?;
            let (ai, aj) = (assign[h][i], assign[h][j]);
            if ai != bi || aj != bj {
                // net occupancy change of the donor leaves; receivers only
                // gain and cannot violate the floor
                for (k, &d) in [ai, aj].iter().enumerate() {
                    if k == 1 && aj == ai {
                        break;
                    }
                    let net = (bi == d) as i64 + (bj == d) as i64
                        - (ai == d) as i64
                        - (aj == d) as i64;
                    if net < 0 && counts[h][d as usize] as i64 + net < floor {
                        feasible = false;
                        break 'outer;
                    }
                }
            }
            if is_var {
                v_i += tree.value_at(bi);
                v_j += tree.value_at(bj);
            } else {
                f_i += tree.value_at(bi);
                f_j += tree.value_at(bj);
            }
            scr.swap_dest_i.push(bi);
            scr.swap_dest_j.push(bj);
        }
    }
    if !feasible {
        state.scratch = scr;
        return Ok(false);
    }
    let ln_s0 = state.sigma0_sq.ln();
    let row = |y: f64, f: f64, v: f64| {
        let lw = -v - ln_s0;
        0.5 * lw - 0.5 * lw.exp() * (y - f) * (y - f)
    };
    let log_ratio = row(data.y[i], f_i, v_i) + row(data.y[j], f_j, v_j)
        - row(data.y[i], state.f_total[i], state.v_total[i])
        - row(data.y[j], state.f_total[j], state.v_total[j]);
    if !(rng.gen::<f64>().ln() < log_ratio) {
        state.scratch = scr;
        return Ok(false);
    }
    // commit both rows: coordinates, caches, assignments, occupancy
    state.u[i] = uj;
    state.u[j] = ui;
    state.f_total[i] = f_i;
    state.f_total[j] = f_j;
    state.v_total[i] = v_i;
    state.v_total[j] = v_j;
    state.log_w[i] = -v_i - ln_s0;
    state.log_w[j] = -v_j - ln_s0;
    state.w[i] = state.log_w[i].exp();
    state.w[j] = state.log_w[j].exp();
    for (h, (assign, counts)) in state
        .mean_assign
        .iter_mut()
        .zip(state.mean_counts.iter_mut())
        .chain(state.var_assign.iter_mut().zip(state.var_counts.iter_mut()))
        .enumerate()
    {
        let (bi, bj) = (scr.swap_dest_i[h], scr.swap_dest_j[h]);
        let (ai, aj) = (assign[i], assign[j]);
        if ai != bi || aj != bj {
            counts[ai as usize] -= 1;
            counts[aj as usize] -= 1;
            counts[bi as usize] += 1;
            counts[bj as usize] += 1;
            assign[i] = bi;
            assign[j] = bj;
        }
    }
    state.scratch = scr;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::identity_map;
    use crate::priors::{BartHyperParams, Sigma0Spec, VarianceHyperParams};
    use crate::sampler::Variant;
    use crate::tree::{Node, Point, SplitAxis, SplitRule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_data(n: usize, p: usize, seed: u64) -> StandardizedData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.gen()).collect()).collect();
        let y: Vec<f64> =
            (0..n).map(|_| 0.5 * (rng.gen::<f64>() - 0.5)).collect();
        StandardizedData::from_standardized(
            x,
            y,
            identity_map(-0.5),
            (0..p).map(|_| identity_map(0.0)).collect(),
        )
        .unwrap()
    }

    /// A state with plenty of latent structure, built from the feasible
    /// prior so every invariant holds at the start.
    fn latent_rich_state(
        n: usize,
        seed: u64,
    ) -> (StandardizedData, ChainConfig, ModelState) {
        let data = toy_data(n, 2, seed);
        let mut cfg =
            ChainConfig::standard(Variant::FullScale, Sigma0Spec::Fixed(0.25));
        cfg.hp = BartHyperParams {
            alpha: 0.97,
            beta: 0.6,
            max_depth: 8,
            min_leaf: 2,
            ..BartHyperParams::standard(5)
        };
        cfg.vhp = VarianceHyperParams { m_v: 3, a0: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let state = ModelState::from_prior(&data, &cfg, &mut rng).unwrap();
        (data, cfg, state)
    }

    #[test]
    fn profile_matches_dense_evaluation() {
        let (data, cfg, state) = latent_rich_state(60, 100);
        let mut scr = Scratch::default();
        let mut saw_active = false;
        for i in 0..data.n() {
            let (f_const, v_const) = collect_active(&state, &data, &cfg, i, &mut scr);
            if scr.active.is_empty() {
                // constants must equal the full evaluation at any u
                for &u in &[0.05, 0.5, 0.95] {
                    let f = state.mean.evaluate(Point { x: &data.x[i], u }).unwrap();
                    let v = state.var.evaluate(Point { x: &data.x[i], u }).unwrap();
                    assert!((f - f_const).abs() < 1e-12);
                    assert!((v - v_const).abs() < 1e-12);
                }
                continue;
            }
            saw_active = true;
            merge_profile(&state, &mut scr, f_const, v_const);
            assert_eq!(scr.bounds.len(), scr.f_run.len() + 1);
            for gi in 0..701 {
                let u = gi as f64 / 701.0;
                let bin = scr.bounds.partition_point(|&b| b <= u) - 1;
                let f = state.mean.evaluate(Point { x: &data.x[i], u }).unwrap();
                let v = state.var.evaluate(Point { x: &data.x[i], u }).unwrap();
                assert!(
                    (f - scr.f_run[bin]).abs() < 1e-9,
                    "mean profile off at obs {} u {}: {} vs {}",
                    i,
                    u,
                    scr.f_run[bin],
                    f
                );
                assert!((v - scr.v_run[bin]).abs() < 1e-9);
            }
        }
        assert!(saw_active, "fixture produced no latent-active trees");
    }

    #[test]
    fn feasibility_flags_match_brute_force() {
        let (data, cfg, state) = latent_rich_state(40, 200);
        let mut scr = Scratch::default();
        let mut flagged = 0usize;
        for i in 0..data.n() {
            let (f_const, v_const) = collect_active(&state, &data, &cfg, i, &mut scr);
            if scr.active.is_empty() {
                continue;
            }
            merge_profile(&state, &mut scr, f_const, v_const);
            for k in 0..scr.f_run.len() {
                let (lo, hi) = (scr.bounds[k], scr.bounds[k + 1]);
                if hi <= lo {
                    continue;
                }
                let mid = 0.5 * (lo + hi);
                // brute force: would moving u_i to mid keep every leaf of
                // every tree at or above the occupancy floor?
                let mut ok = true;
                for (trees, assign, counts) in [
                    (&state.mean.trees, &state.mean_assign, &state.mean_counts),
                    (&state.var.trees, &state.var_assign, &state.var_counts),
                ] {
                    for (h, t) in trees.iter().enumerate() {
                        let old = assign[h][i];
                        let new =
                            t.leaf_index(Point { x: &data.x[i], u: mid }).unwrap();
                        if new != old
                            && (counts[h][old as usize] as usize) - 1 < cfg.hp.min_leaf
                        {
                            ok = false;
                        }
                    }
                }
                assert_eq!(
                    scr.feas[k], ok,
                    "feasibility mismatch at obs {} interval [{}, {})",
                    i, lo, hi
                );
                if !ok {
                    flagged += 1;
                }
            }
        }
        assert!(flagged > 0, "fixture never hit a binding constraint");
    }

    /// Hand-built two-interval state: one mean tree splitting u at 0.4,
    /// empty variance ensemble, all occupancies far from the floor.
    fn two_interval_state() -> (StandardizedData, ChainConfig, ModelState) {
        let n = 24;
        let x: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64 / n as f64]).collect();
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { -0.22 } else { 0.1 }).collect();
        let data = StandardizedData::from_standardized(
            x,
            y,
            identity_map(-0.5),
            vec![identity_map(0.0)],
        )
        .unwrap();
        let mut cfg =
            ChainConfig::standard(Variant::Homoscedastic, Sigma0Spec::Fixed(0.3));
        cfg.hp = BartHyperParams { min_leaf: 2, ..BartHyperParams::standard(1) };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut state = ModelState::initial(&data, &cfg, &mut rng).unwrap();
        state.mean.trees[0] = Tree {
            nodes: vec![
                Node::Internal {
                    rule: SplitRule { axis: SplitAxis::Latent, cutpoint: 0.4 },
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: -0.3 },
                Node::Leaf { value: 0.2 },
            ],
        };
        // spread latents so both leaves are comfortably occupied
        for i in 0..n {
            state.u[i] = (i as f64 + 0.5) / n as f64;
        }
        state.rebuild_caches(&data);
        (data, cfg, state)
    }

    #[test]
    fn gibbs_frequencies_match_analytic_weights() {
        let (data, cfg, state) = two_interval_state();
        let i = 0; // y = -0.22, favouring the left leaf value -0.3
        let s0 = 0.3;
        let wa = 0.4 * (log_normal_pdf(data.y[i], -0.3, s0)).exp();
        let wb = 0.6 * (log_normal_pdf(data.y[i], 0.2, s0)).exp();
        let p_left = wa / (wa + wb);
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let mut stats = MoveStats::default();
        let reps = 40_000;
        let mut left = 0usize;
        let mut left_mean_u = 0.0;
        for _ in 0..reps {
            let mut st = state.clone();
            latent_update_gibbs(&mut st, &data, &cfg, i, &mut rng, &mut stats).unwrap();
            if st.u[i] < 0.4 {
                left += 1;
                left_mean_u += st.u[i];
            }
            // the fitted cache must track the move exactly
            let f = st.mean.evaluate(Point { x: &data.x[i], u: st.u[i] }).unwrap();
            assert!((st.f_total[i] - f).abs() < 1e-12);
        }
        let phat = left as f64 / reps as f64;
        let se = (p_left * (1.0 - p_left) / reps as f64).sqrt();
        assert!(
            (phat - p_left).abs() < 4.0 * se,
            "left-interval frequency {} vs analytic {}",
            phat,
            p_left
        );
        // uniform within the chosen interval: mean of u | left = 0.2
        let mu = left_mean_u / left as f64;
        assert!((mu - 0.2).abs() < 0.005, "within-interval mean {}", mu);
    }

    #[test]
    fn slice_preserves_the_exact_conditional() {
        // draw from the conditional (gibbs), push through three slice
        // steps; the interval frequencies must still match the analytic
        // conditional if the slice kernel leaves it invariant
        let (data, cfg, state) = two_interval_state();
        let i = 3;
        let s0 = 0.3;
        let wa = 0.4 * (log_normal_pdf(data.y[i], -0.3, s0)).exp();
        let wb = 0.6 * (log_normal_pdf(data.y[i], 0.2, s0)).exp();
        let p_left = wa / (wa + wb);
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let mut stats = MoveStats::default();
        let reps = 40_000;
        let mut left = 0usize;
        for _ in 0..reps {
            let mut st = state.clone();
            latent_update_gibbs(&mut st, &data, &cfg, i, &mut rng, &mut stats).unwrap();
            for _ in 0..3 {
                latent_update_slice(&mut st, &data, &cfg, i, &mut rng, &mut stats).unwrap();
            }
            if st.u[i] < 0.4 {
                left += 1;
            }
        }
        let phat = left as f64 / reps as f64;
        let se = (p_left * (1.0 - p_left) / reps as f64).sqrt();
        assert!(
            (phat - p_left).abs() < 4.0 * se,
            "after slice steps: {} vs analytic {}",
            phat,
            p_left
        );
        assert_eq!(stats.latent_stuck, 0);
    }

    #[test]
    fn pinned_observation_never_leaves_its_leaf() {
        let (data, cfg, mut state) = two_interval_state();
        // squeeze the left leaf down to exactly min_leaf = 2 members
        for i in 0..data.n() {
            state.u[i] = if i < 2 { 0.2 } else { 0.7 };
        }
        state.rebuild_caches(&data);
        assert_eq!(state.mean_counts[0][1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let mut stats = MoveStats::default();
        for _ in 0..2_000 {
            latent_update_gibbs(&mut state, &data, &cfg, 0, &mut rng, &mut stats).unwrap();
            assert!(state.u[0] < 0.4, "pinned observation escaped its leaf");
            latent_update_slice(&mut state, &data, &cfg, 0, &mut rng, &mut stats).unwrap();
            assert!(state.u[0] < 0.4);
            assert_eq!(state.mean_counts[0][1], 2);
        }
        // an unpinned observation from the roomy side is free to cross
        let mut crossed = false;
        for _ in 0..200 {
            latent_update_gibbs(&mut state, &data, &cfg, 10, &mut rng, &mut stats)
                .unwrap();
            if state.u[10] < 0.4 {
                crossed = true;
            }
        }
        assert!(crossed, "free observation never crossed in 200 draws");
    }

    #[test]
    fn latent_sweep_keeps_caches_consistent() {
        let (data, cfg, mut state) = latent_rich_state(50, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        let mut stats = MoveStats::default();
        for round in 0..30 {
            for i in 0..data.n() {
                if round % 2 == 0 {
                    latent_update_gibbs(&mut state, &data, &cfg, i, &mut rng, &mut stats)
                        .unwrap();
                } else {
                    latent_update_slice(&mut state, &data, &cfg, i, &mut rng, &mut stats)
                        .unwrap();
                }
            }
        }
        let mut fresh = state.clone();
        fresh.rebuild_caches(&data);
        for i in 0..data.n() {
            assert!((state.f_total[i] - fresh.f_total[i]).abs() < 1e-9);
            assert!((state.v_total[i] - fresh.v_total[i]).abs() < 1e-9);
        }
        assert_eq!(state.mean_assign, fresh.mean_assign);
        assert_eq!(state.var_assign, fresh.var_assign);
        assert_eq!(state.mean_counts, fresh.mean_counts);
        assert_eq!(state.var_counts, fresh.var_counts);
        // occupancy floor held throughout
        for (t, counts) in state
            .mean
            .trees
            .iter()
            .zip(state.mean_counts.iter())
            .chain(state.var.trees.iter().zip(state.var_counts.iter()))
        {
            for id in t.leaf_ids() {
                assert!(counts[id as usize] as usize >= cfg.hp.min_leaf);
            }
        }
        assert_eq!(stats.latent_updates, 30 * 50);
    }

    #[test]
    fn no_active_trees_means_uniform_redraw() {
        let data = toy_data(20, 1, 400);
        let mut cfg =
            ChainConfig::standard(Variant::Homoscedastic, Sigma0Spec::Fixed(0.2));
        cfg.hp = BartHyperParams::standard(3);
        let mut rng = ChaCha8Rng::seed_from_u64(401);
        let mut state = ModelState::initial(&data, &cfg, &mut rng).unwrap();
        let f_before = state.f_total.clone();
        let mut stats = MoveStats::default();
        let mut draws = Vec::new();
        for _ in 0..5_000 {
            latent_update_gibbs(&mut state, &data, &cfg, 0, &mut rng, &mut stats).unwrap();
            draws.push(state.u[0]);
        }
        assert_eq!(state.f_total, f_before, "constant trees must leave the fit alone");
        let mean: f64 = draws.iter().sum::<f64>() / draws.len() as f64;
        let var: f64 =
            draws.iter().map(|u| (u - mean) * (u - mean)).sum::<f64>() / draws.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "uniform mean {}", mean);
        assert!((var - 1.0 / 12.0).abs() < 0.005, "uniform variance {}", var);
    }

    #[test]
    fn exchange_pass_keeps_caches_and_floor_consistent() {
        let (data, cfg, mut state) = latent_rich_state(60, 600);
        let mut rng = ChaCha8Rng::seed_from_u64(601);
        let mut stats = MoveStats::default();
        for round in 0..40 {
            for i in 0..data.n() {
                latent_update_gibbs(&mut state, &data, &cfg, i, &mut rng, &mut stats)
                    .unwrap();
            }
            latent_swap_pass(&mut state, &data, &cfg, &mut rng, &mut stats).unwrap();
            if round % 8 == 0 {
                let mut fresh = state.clone();
                fresh.rebuild_caches(&data);
                for i in 0..data.n() {
                    assert!(
                        (state.f_total[i] - fresh.f_total[i]).abs() < 1e-9,
                        "f cache drifted at {} after exchanges",
                        i
                    );
                    assert!((state.v_total[i] - fresh.v_total[i]).abs() < 1e-9);
                }
                assert_eq!(state.mean_assign, fresh.mean_assign);
                assert_eq!(state.var_assign, fresh.var_assign);
                assert_eq!(state.mean_counts, fresh.mean_counts);
                assert_eq!(state.var_counts, fresh.var_counts);
                for (t, counts) in state
                    .mean
                    .trees
                    .iter()
                    .zip(state.mean_counts.iter())
                    .chain(state.var.trees.iter().zip(state.var_counts.iter()))
                {
                    for id in t.leaf_ids() {
                        assert!(
                            counts[id as usize] as usize >= cfg.hp.min_leaf,
                            "leaf below occupancy floor after an exchange"
                        );
                    }
                }
            }
        }
        assert_eq!(stats.latent_swap_proposed, 40 * 60);
        assert!(stats.latent_swap_accepted > 0, "no exchanges accepted in 40 passes");
    }

    #[test]
    fn exchange_crosses_floors_single_moves_cannot() {
        // two latent splits, all three leaves exactly at the occupancy
        // floor: no single coordinate may change leaves, but a one-for-one
        // trade keeps every count and must be able to cross
        let n = 15;
        let data = toy_data(n, 1, 700);
        let mut cfg = ChainConfig::standard(Variant::Homoscedastic, Sigma0Spec::Fixed(0.3));
        cfg.hp = BartHyperParams { min_leaf: 5, ..BartHyperParams::standard(1) };
        let mut rng = ChaCha8Rng::seed_from_u64(701);
        let mut state = ModelState::initial(&data, &cfg, &mut rng).unwrap();
        state.mean.trees[0] = Tree {
            nodes: vec![
                Node::Internal {
                    rule: SplitRule { axis: SplitAxis::Latent, cutpoint: 1.0 / 3.0 },
                    left: 1,
                    right: 2,
                },
                Node::Leaf { value: -0.1 },
                Node::Internal {
                    rule: SplitRule { axis: SplitAxis::Latent, cutpoint: 2.0 / 3.0 },
                    left: 3,
                    right: 4,
                },
                Node::Leaf { value: 0.0 },
                Node::Leaf { value: 0.1 },
            ],
        };
        for i in 0..n {
            state.u[i] = (i as f64 + 0.5) / n as f64;
        }
        state.rebuild_caches(&data);
        for leaf in [1usize, 3, 4] {
            assert_eq!(state.mean_counts[0][leaf], 5, "every leaf starts at the floor");
        }

        // the single-coordinate kernel must never move anyone across
        let homes: Vec<u32> = state.mean_assign[0].clone();
        let mut stats = MoveStats::default();
        let mut probe = state.clone();
        for _ in 0..50 {
            for i in 0..n {
                latent_update_gibbs(&mut probe, &data, &cfg, i, &mut rng, &mut stats)
                    .unwrap();
            }
        }
        assert_eq!(
            probe.mean_assign[0], homes,
            "a pinned observation changed leaves under the one-coordinate kernel"
        );

        // the exchange pass must cross, and keep the floor exact
        let mut crossed = false;
        for _ in 0..50 {
            latent_swap_pass(&mut state, &data, &cfg, &mut rng, &mut stats).unwrap();
            if state.mean_assign[0] != homes {
                crossed = true;
                break;
            }
        }
        assert!(crossed, "exchanges never traded rows across a split");
        for leaf in [1usize, 3, 4] {
            assert_eq!(state.mean_counts[0][leaf], 5, "floor must stay exact after trades");
        }
        let mut fresh = state.clone();
        fresh.rebuild_caches(&data);
        assert_eq!(state.mean_assign, fresh.mean_assign);
        for i in 0..n {
            assert!((state.f_total[i] - fresh.f_total[i]).abs() < 1e-12);
        }
    }
}
