//! Geometric relationship annotation: the stand-in for LLM relationship
//! extraction on synthetic scenes.

use serde::{Deserialize, Serialize};

use super::scene::{contains_aabb, footprints_overlap, Primitive, SceneSpec, Shape};

pub const STANDING_ON: &str = "standing on";
pub const SUPPORTING: &str = "supporting";
pub const ABOVE: &str = "above";
pub const BELOW: &str = "below";
pub const NEXT_TO: &str = "next to";
pub const SAME_AS: &str = "same as";
pub const INSIDE: &str = "inside";
pub const CONTAINING: &str = "containing";
pub const PART_OF: &str = "part of";

/// Proximity factor for "next to".
pub const PROXIMITY_FACTOR: f64 = 1.5;
/// Maximum per-channel albedo difference for "same as".
pub const ALBEDO_TOLERANCE: f64 = 0.05;
/// Maximum relative size difference for "same as".
pub const SIZE_TOLERANCE: f64 = 0.10;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: u16,
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub subject: u16,
    pub object: u16,
    pub predicate: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl GroundTruthGraph {
    pub fn class_of(&self, id: u16) -> Option<&str> {
        self.nodes.iter().find(|n| n.id == id).map(|n| n.class.as_str())
    }

    /// Predicates for the ordered pair, in annotation order.
    pub fn predicates(&self, subject: u16, object: u16) -> Vec<&str> {
        self.edges
            .iter()
            .filter(|e| e.subject == subject && e.object == object)
            .map(|e| e.predicate.as_str())
            .collect()
    }

    pub fn has_edge(&self, subject: u16, object: u16, predicate: &str) -> bool {
        self.edges
            .iter()
            .any(|e| e.subject == subject && e.object == object && e.predicate == predicate)
    }
}

fn same_kind(a: &Primitive, b: &Primitive) -> bool {
    matches!(
        (&a.shape, &b.shape),
        (Shape::Sphere { .. }, Shape::Sphere { .. }) | (Shape::Box { .. }, Shape::Box { .. })
    )
}

fn similar_size(a: &Primitive, b: &Primitive) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= SIZE_TOLERANCE * x.max(y);
    match (&a.shape, &b.shape) {
        (Shape::Sphere { radius: r1 }, Shape::Sphere { radius: r2 }) => close(*r1, *r2),
        (Shape::Box { half_extents: h1, .. }, Shape::Box { half_extents: h2, .. }) => {
            let mut s1 = *h1;
            let mut s2 = *h2;
            s1[..2].sort_by(|a, b| a.partial_cmp(b).unwrap());
            s2[..2].sort_by(|a, b| a.partial_cmp(b).unwrap());
            (0..3).all(|i| close(s1[i], s2[i]))
        }
        _ => false,
    }
}

/// Predicates holding for `(subject, object)`, in a fixed order.
pub fn pair_predicates(scene: &SceneSpec, a: &Primitive, b: &Primitive) -> Vec<&'static str> {
    let eps = scene.contact_tolerance();
    let mut out = Vec::new();
    let (ba, bb) = (a.aabb(), b.aabb());
    let a_in_b = contains_aabb(&bb, &ba);
    let b_in_a = contains_aabb(&ba, &bb);
    if a_in_b {
        out.push(INSIDE);
    }
    if b_in_a {
        out.push(CONTAINING);
    }
    let overlap = footprints_overlap(&a.footprint(), &b.footprint(), 0.0);
    if overlap && !a_in_b && !b_in_a {
        let gap_ab = a.bottom() - b.top();
        let gap_ba = b.bottom() - a.top();
        if gap_ab.abs() < eps {
            out.push(STANDING_ON);
        } else if gap_ab > eps {
            out.push(ABOVE);
        }
        if gap_ba.abs() < eps {
            out.push(SUPPORTING);
        } else if gap_ba > eps {
            out.push(BELOW);
        }
    }
    if !overlap {
        let dist = (a.center() - b.center()).norm();
        let reach = a.size() + b.size();
        let dz = (a.center[2] - b.center[2]).abs();
        if dist < PROXIMITY_FACTOR * reach && dz < 0.5 * reach {
            out.push(NEXT_TO);
        }
    }
    let albedo_close = (0..3).all(|c| (a.albedo[c] - b.albedo[c]).abs() <= ALBEDO_TOLERANCE);
    if same_kind(a, b) && albedo_close && similar_size(a, b) {
        out.push(SAME_AS);
    }
    if scene.parts.contains(&[a.id, b.id]) {
        out.push(PART_OF);
    }
    out
}

/// Evaluates every rule over all ordered pairs of distinct primitives.
pub fn annotate_relations(scene: &SceneSpec) -> GroundTruthGraph {
    let nodes = scene
        .primitives
        .iter()
        .map(|p| GraphNode {
            id: p.id,
            class: p.class.clone(),
        })
        .collect();
    let mut edges = Vec::new();
    for a in &scene.primitives {
        for b in &scene.primitives {
            if a.id == b.id {
                continue;
            }
            for p in pair_predicates(scene, a, b) {
                edges.push(GraphEdge {
                    subject: a.id,
                    object: b.id,
                    predicate: p.to_string(),
                });
            }
        }
    }
    GroundTruthGraph { nodes, edges }
}

/// Predicates whose reverse edge always carries the same predicate.
pub fn is_symmetric(predicate: &str) -> bool {
    matches!(predicate, NEXT_TO | SAME_AS)
}
