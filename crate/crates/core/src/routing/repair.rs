//! Local-repair scoring and next-hop selection.

use std::cmp::Ordering;

use crate::energy::PowerZone;
use crate::NodeId;

/// Inputs to the repair score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairContext {
    /// Last known hop count to the destination.
    pub min_rpr_ttl: u32,
    pub vn_count: u32,
    pub hops_to_sender: u32,
    pub power: f64,
}

/// `max(min_rpr_ttl + vn_count, 0.5 * hops_to_sender) + power`.
pub fn compute_eq1(ctx: &RepairContext) -> f64 {
    let base = f64::from(ctx.min_rpr_ttl) + f64::from(ctx.vn_count);
    base.max(0.5 * f64::from(ctx.hops_to_sender)) + ctx.power
}

/// The repair score rounded up to a whole hop budget.
pub fn repair_ttl(ctx: &RepairContext) -> u32 {
    compute_eq1(ctx).ceil().max(1.0) as u32
}

/// Baseline local-repair budget: the score without the VN and power terms,
/// plus a fixed margin of two hops.
pub fn baseline_repair_ttl(last_known_hop_count: u32, hops_to_sender: u32) -> u32 {
    let base = f64::from(last_known_hop_count).max(0.5 * f64::from(hops_to_sender));
    (base + 2.0).ceil() as u32
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairCandidate {
    pub node: NodeId,
    pub ctx: RepairContext,
    pub zone: PowerZone,
}

/// Picks the highest-scoring Active candidate. Ties go to fewer hops, then to
/// the smaller id. `None` when no candidate is Active.
pub fn select_repair_next_hop(candidates: &[RepairCandidate]) -> Option<NodeId> {
    rank_repair_candidates(candidates).first().map(|c| c.node)
}

/// All Active candidates, best first, in the order [`select_repair_next_hop`]
/// would try them.
pub fn rank_repair_candidates(candidates: &[RepairCandidate]) -> Vec<RepairCandidate> {
    let mut out: Vec<RepairCandidate> = candidates
        .iter()
        .filter(|c| c.zone == PowerZone::Active)
        .copied()
        .collect();
    out.sort_by(|a, b| {
        compute_eq1(&b.ctx)
            .partial_cmp(&compute_eq1(&a.ctx))
            .unwrap_or(Ordering::Equal)
            .then(a.ctx.hops_to_sender.cmp(&b.ctx.hops_to_sender))
            .then(a.node.cmp(&b.node))
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(vn: u32, min_ttl: u32, hops: u32, power: f64) -> RepairContext {
        RepairContext {
            min_rpr_ttl: min_ttl,
            vn_count: vn,
            hops_to_sender: hops,
            power,
        }
    }

    fn cand(id: u32, c: RepairContext, zone: PowerZone) -> RepairCandidate {
        RepairCandidate {
            node: NodeId(id),
            ctx: c,
            zone,
        }
    }

    #[test]
    fn score_examples() {
        assert_eq!(compute_eq1(&ctx(3, 3, 1, 9.0)), 15.0);
        assert_eq!(compute_eq1(&ctx(4, 2, 2, 8.5)), 14.5);
        assert_eq!(compute_eq1(&ctx(2, 1, 4, 7.5)), 10.5);
        assert_eq!(compute_eq1(&ctx(0, 0, 0, 0.0)), 0.0);
        assert_eq!(compute_eq1(&ctx(0, 1, 10, 2.0)), 7.0);
    }

    #[test]
    fn ttl_rounds_up() {
        assert_eq!(repair_ttl(&ctx(3, 3, 1, 9.0)), 15);
        assert_eq!(repair_ttl(&ctx(4, 2, 2, 8.5)), 15);
        assert_eq!(repair_ttl(&ctx(0, 0, 0, 0.0)), 1);
        assert_eq!(baseline_repair_ttl(3, 1), 5);
        assert_eq!(baseline_repair_ttl(1, 9), 7);
    }

    #[test]
    fn losing_a_vn_lowers_the_score() {
        assert_eq!(compute_eq1(&ctx(3, 3, 1, 9.0)), 15.0);
        assert_eq!(compute_eq1(&ctx(2, 3, 1, 9.0)), 14.0);
    }

    #[test]
    fn prefers_higher_score() {
        let l = cand(5, ctx(3, 3, 1, 9.0), PowerZone::Active);
        let p1 = cand(9, ctx(1, 4, 1, 7.0), PowerZone::Active);
        assert_eq!(select_repair_next_hop(&[p1, l]), Some(NodeId(5)));
    }

    #[test]
    fn rejects_inactive_even_if_best() {
        let p = cand(8, ctx(3, 1, 2, 40.0), PowerZone::Critical);
        let q = cand(3, ctx(3, 1, 3, 3.0), PowerZone::Active);
        assert_eq!(select_repair_next_hop(&[p, q]), Some(NodeId(3)));
        assert_eq!(select_repair_next_hop(&[p]), None);
        assert_eq!(select_repair_next_hop(&[]), None);
    }

    #[test]
    fn ties_prefer_fewer_hops_then_smaller_id() {
        // Both score 10; the hop term is dominated by the base.
        let a = cand(7, ctx(1, 4, 3, 5.0), PowerZone::Active);
        let b = cand(2, ctx(1, 4, 2, 5.0), PowerZone::Active);
        assert_eq!(select_repair_next_hop(&[a, b]), Some(NodeId(2)));
        let c = cand(4, ctx(1, 4, 2, 5.0), PowerZone::Active);
        assert_eq!(select_repair_next_hop(&[c, b]), Some(NodeId(2)));
        let d = cand(1, ctx(1, 4, 2, 5.0), PowerZone::Active);
        assert_eq!(select_repair_next_hop(&[a, c, d]), Some(NodeId(1)));
    }

    proptest! {
        #[test]
        fn selection_is_sound(raw in proptest::collection::vec((0u32..6, 0u32..6, 0u32..8, 0f64..=10.0, 0u8..3), 0..12)) {
            let cands: Vec<RepairCandidate> = raw
                .iter()
                .enumerate()
                .map(|(i, &(vn, t, h, p, z))| {
                    let zone = [PowerZone::Danger, PowerZone::Critical, PowerZone::Active][z as usize];
                    cand(i as u32, ctx(vn, t, h, p), zone)
                })
                .collect();
            match select_repair_next_hop(&cands) {
                None => prop_assert!(cands.iter().all(|c| c.zone != PowerZone::Active)),
                Some(n) => {
                    let chosen = cands.iter().find(|c| c.node == n).unwrap();
                    prop_assert_eq!(chosen.zone, PowerZone::Active);
                    for c in cands.iter().filter(|c| c.zone == PowerZone::Active) {
                        prop_assert!(compute_eq1(&chosen.ctx) >= compute_eq1(&c.ctx));
                    }
                }
            }
        }

        #[test]
        fn score_is_monotone_in_each_term(vn in 0u32..20, t in 0u32..20, h in 0u32..40, p in 0f64..=10.0) {
            let base = compute_eq1(&ctx(vn, t, h, p));
            prop_assert!(compute_eq1(&ctx(vn + 1, t, h, p)) >= base);
            prop_assert!(compute_eq1(&ctx(vn, t + 1, h, p)) >= base);
            prop_assert!(compute_eq1(&ctx(vn, t, h + 1, p)) >= base);
            prop_assert!(compute_eq1(&ctx(vn, t, h, p + 0.5)) > base);
        }
    }
}
