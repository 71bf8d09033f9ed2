//! Starting assignments for the SCA pipeline and the fixed-assignment
//! benchmark.
//!
//! Every assignment returned here respects the delay and causality masks.
//! [`default_init`] turns the round-robin split into an allocation.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fbtrate::q_inv;
use crate::problem::{build_masks, Allocation, Assignment, ConstraintMasks};
use crate::scasolver::{equal_power, initial_allocation, repair_causality, RateModel};
use crate::sysmodel::{ChannelRealization, Link, SystemConfig};

/// Sub-carrier `m` goes to user `m mod K` on both links, so remainders go
/// to the lowest-index users. The owner takes every slot of its
/// sub-carriers that the delay mask allows; causality conflicts are then
/// resolved by releasing the earliest conflicting downlink slots.
pub fn round_robin_assignment(cfg: &SystemConfig) -> Assignment {
    let masks = build_masks(cfg);
    let mut a = Assignment::empty(cfg);
    for link in Link::BOTH {
        for m in 0..cfg.subcarriers(link) {
            let k = m % cfg.users;
            for n in 0..cfg.slots(link) {
                if link == Link::Down && !masks.downlink_allowed(k, n) {
                    continue;
                }
                a.set(cfg, link, m, n, Some(k));
            }
        }
    }
    repair_causality(cfg, &masks, &mut a);
    a
}

/// Uniformly random owner per cell among the users the delay mask allows,
/// followed by causality repair.
pub fn random_assignment(cfg: &SystemConfig, seed: u64) -> Assignment {
    let masks = build_masks(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Assignment::empty(cfg);
    for link in Link::BOTH {
        for m in 0..cfg.subcarriers(link) {
            for n in 0..cfg.slots(link) {
                let allowed: Vec<usize> = (0..cfg.users)
                    .filter(|&k| link == Link::Up || masks.downlink_allowed(k, n))
                    .collect();
                if !allowed.is_empty() {
                    let k = allowed[rng.random_range(0..allowed.len())];
                    a.set(cfg, link, m, n, Some(k));
                }
            }
        }
    }
    repair_causality(cfg, &masks, &mut a);
    a
}

/// Total power of the equal per-cell allocation meeting `demand`.
fn equal_power_total(gains: &[f64], demand: f64, q: f64) -> f64 {
    match gains.len() {
        _ if demand <= 0.0 => 0.0,
        0 => f64::INFINITY,
        n => equal_power(gains, demand, q) * n as f64,
    }
}

fn eligible(cfg: &SystemConfig, masks: &ConstraintMasks, a: &Assignment, link: Link, k: usize, n: usize) -> bool {
    match link {
        Link::Up => {
            let dl = a.cells_of(cfg, Link::Down, k);
            !masks.dl_conflicts(n).any(|d| dl.iter().any(|c| c.1 == d))
        }
        Link::Down => {
            if !masks.downlink_allowed(k, n) {
                return false;
            }
            let ul = a.cells_of(cfg, Link::Up, k);
            !masks.ul_conflicts(n).any(|u| ul.iter().any(|c| c.1 == u))
        }
    }
}

/// Greedy marginal-power assignment.
///
/// The cost of a user on a link is the weighted total power of an equal
/// per-cell allocation that meets its demand. At each step every user
/// bids for its strongest free eligible cell. Users without any cell bid
/// first, ordered by regret; after that the bid that lowers the total cost
/// the most wins. The loop stops when no bid lowers the cost, which happens
/// once the dispersion penalty of another cell outweighs its capacity.
pub fn greedy_assignment(cfg: &SystemConfig, real: &ChannelRealization, rate: RateModel) -> Assignment {
    let masks = build_masks(cfg);
    let mut a = Assignment::empty(cfg);
    let q = |link: Link, k: usize| match rate {
        RateModel::Shannon => 0.0,
        RateModel::FiniteBlocklength => q_inv(cfg.error_prob(link, k)).unwrap_or(0.0).max(0.0),
    };
    let weight = |link: Link, k: usize| match link {
        Link::Up => cfg.weights[k],
        Link::Down => 1.0,
    };
    let mut gains: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); cfg.users]; 2];
    let li = |link: Link| (link == Link::Down) as usize;

    loop {
        // (priority, new cost, link, user, m, n)
        let mut best: Option<(f64, f64, Link, usize, usize, usize)> = None;
        let mut first_phase = false;
        for link in Link::BOTH {
            for k in 0..cfg.users {
                let demand = cfg.demand_bits(link, k);
                if demand <= 0.0 {
                    continue;
                }
                // The two strongest free eligible sub-carriers.
                let mut top: Vec<(f64, usize, usize)> = Vec::with_capacity(2);
                for m in 0..cfg.subcarriers(link) {
                    let g = real.gain(link, k, m);
                    let free = (0..cfg.slots(link))
                        .find(|&n| a.owner(cfg, link, m, n).is_none() && eligible(cfg, &masks, &a, link, k, n));
                    if let Some(n) = free {
                        top.push((g, m, n));
                        top.sort_by(|x, y| y.0.total_cmp(&x.0));
                        top.truncate(2);
                    }
                }
                let Some(&(g, m, n)) = top.first() else { continue };
                let held = &gains[li(link)][k];
                let cost_with = |extra: f64| {
                    let mut more = held.clone();
                    more.push(extra);
                    weight(link, k) * equal_power_total(&more, demand, q(link, k))
                };
                let old = weight(link, k) * equal_power_total(held, demand, q(link, k));
                let new = cost_with(g);
                let priority = if old.is_infinite() {
                    // A user without cells bids with its regret: what it
                    // loses if a rival takes its strongest cell.
                    if !first_phase {
                        first_phase = true;
                        best = None;
                    }
                    top.get(1).map_or(f64::INFINITY, |c| cost_with(c.0) - new)
                } else {
                    if first_phase {
                        continue;
                    }
                    let gain = old - new;
                    if !(gain > 1e-12 * old) {
                        continue;
                    }
                    gain
                };
                let better = best.is_none_or(|b| priority > b.0 || (priority == b.0 && new < b.1));
                if better {
                    best = Some((priority, new, link, k, m, n));
                }
            }
        }
        let Some((_, _, link, k, m, n)) = best else { break };
        a.set(cfg, link, m, n, Some(k));
        gains[li(link)][k].push(real.gain(link, k, m));
    }
    a
}

/// Round-robin assignment with capacity-inverting powers.
pub fn default_init(cfg: &SystemConfig, real: &ChannelRealization) -> Allocation {
    initial_allocation(cfg, real, &round_robin_assignment(cfg))
}

/// Random assignment with capacity-inverting powers.
pub fn random_init(cfg: &SystemConfig, real: &ChannelRealization, seed: u64) -> Allocation {
    initial_allocation(cfg, real, &random_assignment(cfg, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::draw_realization;

    fn small() -> SystemConfig {
        SystemConfig::reference(3).with_subcarriers(5)
    }

    #[test]
    fn round_robin_splits_remainders_low() {
        let cfg = small();
        let a = round_robin_assignment(&cfg);
        let held: Vec<usize> = (0..3).map(|k| a.cells_of(&cfg, Link::Up, k).len()).collect();
        let slots = cfg.slots_ul;
        assert!(held[0] >= held[1] && held[1] >= held[2]);
        assert_eq!(held[0], 2 * slots);
        assert!(a.respects_masks(&cfg, &build_masks(&cfg)));
    }

    #[test]
    fn round_robin_releases_early_downlink() {
        let cfg = SystemConfig::reference(1).with_subcarriers(2);
        let a = round_robin_assignment(&cfg);
        // One overlap slot: downlink slot 0 conflicts with the last uplink slot.
        assert_eq!(a.cells_of(&cfg, Link::Up, 0).len(), 2 * cfg.slots_ul);
        assert!(a.cells_of(&cfg, Link::Down, 0).iter().all(|c| c.1 >= 1));
    }

    #[test]
    fn all_starts_respect_masks() {
        let cfg = small().with_deadlines(vec![5, 7, 5]);
        let real = draw_realization(&cfg, 3).unwrap();
        let masks = build_masks(&cfg);
        for (i, a) in [
            round_robin_assignment(&cfg),
            random_assignment(&cfg, 9),
            greedy_assignment(&cfg, &real, RateModel::FiniteBlocklength),
            greedy_assignment(&cfg, &real, RateModel::Shannon),
        ]
        .into_iter()
        .enumerate()
        {
            assert!(a.respects_masks(&cfg, &masks));
            if i == 1 {
                // A random draw may leave a user without cells.
                continue;
            }
            for link in Link::BOTH {
                for k in 0..cfg.users {
                    assert!(!a.cells_of(&cfg, link, k).is_empty(), "start {i} {link:?} user {k}");
                }
            }
        }
    }

    #[test]
    fn equal_power_inverts_capacity() {
        // Two unit-gain cells, 2 bits: p = 1 per cell.
        let total = equal_power_total(&[1.0, 1.0], 2.0, 0.0);
        assert!((total - 2.0).abs() < 1e-9, "{total}");
        assert_eq!(equal_power_total(&[], 1.0, 0.0), f64::INFINITY);
        assert_eq!(equal_power_total(&[], 0.0, 3.0), 0.0);
    }
}
