//! Library results checked against small independent computations.

use lap_core::actions::{Action, ActionSequence};
use lap_core::assembly::{settle_with_graph, ContactGraph, Relation, DEFAULT_CLEARANCE};
use lap_core::grid::{GridBox, GridConfig, GridLayout};
use lap_core::metrics::{self, ExclusionConfig};
use lap_core::refine::rule_policy;
use lap_core::scene::{estimate_gravity, CameraBox, Vec3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gb(id: u32, pos: [i32; 3], size: [i32; 3]) -> GridBox {
    // yaw index 12 of 24 is zero rotation
    GridBox { id, class_name: "crate".into(), bbox2d: [0; 4], pos, size, yaw_idx: 12 }
}

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Dominant eigenvector of the scatter matrix by power iteration.
fn power_iteration(normals: &[Vec3]) -> Vec3 {
    let scatter = normals.iter().fold(nalgebra::Matrix3::zeros(), |m, n| m + n * n.transpose());
    let mean: Vec3 = normals.iter().sum();
    let mut v = mean.normalize();
    for _ in 0..500 {
        v = (scatter * v).normalize();
    }
    if v.dot(&mean) < 0.0 {
        -v
    } else {
        v
    }
}

#[test]
fn gravity_estimate_matches_power_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..300 {
        let g = unit(&mut rng);
        let n = rng.random_range(2..25);
        let mut ups = Vec::new();
        let mut boxes = Vec::new();
        for id in 0..n {
            // Tilt each box's up axis by a few degrees.
            let up = (g + unit(&mut rng) * rng.random_range(0.0..0.08)).normalize();
            let x = up.cross(&unit(&mut rng)).normalize();
            let z = up.cross(&x);
            let center = Vec3::new(0.0, 0.0, 5.0) + unit(&mut rng);
            boxes.push(CameraBox::new(id, "box", center, Vec3::new(1.0, 0.5, 0.7), x, z).unwrap());
            ups.push(up);
        }
        let est = estimate_gravity(&boxes).unwrap();
        let oracle = power_iteration(&ups);
        assert!((est - oracle).norm() < 1e-6, "{est:?} vs {oracle:?}");
    }
}

fn two_box(a: GridBox, b: GridBox) -> GridLayout {
    GridLayout::new(GridConfig::default(), vec![a, b])
}

/// Expected de-collision of two overlapping unrotated floor boxes: the
/// smaller footprint (lower id on ties) moves along the shortest of the four
/// clearing displacements plus one unit of margin. `None` when two
/// directions tie, since the pick then depends on candidate order.
fn expected_push(a: &GridBox, b: &GridBox) -> Option<ActionSequence> {
    let (m, o, idx) = if (a.size[0] * a.size[2], a.id) <= (b.size[0] * b.size[2], b.id) { (a, b, 0) } else { (b, a, 1) };
    let half = |g: &GridBox, k: usize| g.size[k] as f64 / 2.0;
    let clear = |k: usize, sign: f64| {
        let gap = if sign > 0.0 {
            (o.pos[k] as f64 + half(o, k)) - (m.pos[k] as f64 - half(m, k))
        } else {
            (m.pos[k] as f64 + half(m, k)) - (o.pos[k] as f64 - half(o, k))
        };
        (gap.ceil() as i32 + 1) * sign as i32
    };
    let options = [[clear(0, 1.0), 0, 0], [clear(0, -1.0), 0, 0], [0, 0, clear(2, 1.0)], [0, 0, clear(2, -1.0)]];
    let len = |d: &[i32; 3]| d[0].abs() + d[2].abs();
    let best = options.iter().min_by_key(|d| len(d)).unwrap();
    if options.iter().filter(|d| len(d) == len(best)).count() > 1 {
        return None;
    }
    Some(ActionSequence(vec![Action::Select(idx), Action::Move(*best), Action::Stop]))
}

proptest! {
    #[test]
    fn overlapping_floor_boxes_separate_along_min_penetration(
        wa in 1i32..8, la in 1i32..8, wb in 1i32..8, lb in 1i32..8,
        ha in 1i32..6, hb in 1i32..6,
        fx in 0.05f64..0.95, fz in 0.05f64..0.95, sx in any::<bool>(), sz in any::<bool>(),
    ) {
        let (wa, la, wb, lb) = (2 * wa, 2 * la, 2 * wb, 2 * lb);
        // Centre offsets strictly inside the overlap range.
        let dx = ((fx * ((wa + wb) / 2) as f64) as i32).max(1) * if sx { 1 } else { -1 };
        let dz = ((fz * ((la + lb) / 2) as f64) as i32).max(1) * if sz { 1 } else { -1 };
        prop_assume!(dx.abs() < (wa + wb) / 2 && dz.abs() < (la + lb) / 2);
        let a = gb(1, [40, 0, 40], [wa, ha, la]);
        let b = gb(2, [40 + dx, 0, 40 + dz], [wb, hb, lb]);
        let expected = expected_push(&a, &b);
        prop_assume!(expected.is_some());
        let expected = expected.unwrap();
        let l = two_box(a, b);
        let seq = rule_policy(&l, &ContactGraph::all_floor(&l));
        prop_assert_eq!(&seq, &expected);
        let after = lap_core::actions::apply_lenient(&l, &seq).0;
        prop_assert!(metrics::aabb_colliding_pairs(&after).is_empty());
    }

    #[test]
    fn settled_towers_stack_by_height_sums(
        heights in prop::collection::vec(1i32..9, 1..7),
        lifts in prop::collection::vec(0i32..30, 7),
        second in prop::collection::vec(1i32..9, 1..4),
    ) {
        let mut objs = Vec::new();
        let mut relations = std::collections::BTreeMap::new();
        // Each level is centred on the one below and no wider.
        for (k, h) in heights.iter().enumerate() {
            let w = 20 - 2 * k as i32;
            objs.push(gb(k as u32, [10, lifts[k], 10], [w, *h, w]));
            relations.insert(k as u32, if k == 0 { Relation::Floor } else { Relation::On(k as u32 - 1) });
        }
        let base = 100;
        for (k, h) in second.iter().enumerate() {
            let id = base + k as u32;
            objs.push(gb(id, [60, lifts[6 - k], 10], [6, *h, 6]));
            relations.insert(id, if k == 0 { Relation::Floor } else { Relation::On(id - 1) });
        }
        let l = GridLayout::new(GridConfig::default(), objs);
        let graph = ContactGraph { relations };
        let s = settle_with_graph(&l, &graph, DEFAULT_CLEARANCE);

        let mut expect = 0;
        for (k, h) in heights.iter().enumerate() {
            prop_assert_eq!(s.objects[k].pos[1], expect);
            expect += h;
        }
        let mut expect = 0;
        for (k, h) in second.iter().enumerate() {
            prop_assert_eq!(s.objects[heights.len() + k].pos[1], expect);
            expect += h;
        }
        for (a, b) in s.objects.iter().zip(&l.objects) {
            prop_assert_eq!((a.pos[0], a.pos[2]), (b.pos[0], b.pos[2]));
        }
        prop_assert_eq!(metrics::support_violation_rate(&s, &ExclusionConfig::default()), 0.0);
        prop_assert_eq!(settle_with_graph(&s, &graph, DEFAULT_CLEARANCE), s);
    }
}

#[test]
fn a_lifted_root_lands_on_a_wide_enough_top_below_it() {
    // A floor-labelled box hovering over a table settles onto the table,
    // since the table top covers its whole footprint.
    let table = gb(0, [10, 0, 10], [12, 7, 12]);
    let crate_ = gb(1, [10, 15, 10], [4, 3, 4]);
    let beside = gb(2, [40, 9, 10], [4, 3, 4]);
    let l = GridLayout::new(GridConfig::default(), vec![table, crate_, beside]);
    let s = settle_with_graph(&l, &ContactGraph::all_floor(&l), DEFAULT_CLEARANCE);
    assert_eq!(s.objects.iter().map(|o| o.pos[1]).collect::<Vec<_>>(), vec![0, 7, 0]);
}
