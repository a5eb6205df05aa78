use serde::{Deserialize, Serialize};

use crate::geom::Obb;
use crate::scenario::ObjectType;

/// Which penalty a contact draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollisionClass {
    /// Contact with a cone or barrier.
    Object,
    /// Contact with a vehicle, pedestrian or cyclist.
    VehicleHuman,
}

impl CollisionClass {
    pub fn of(other: ObjectType) -> Self {
        if other.is_road_object() {
            CollisionClass::Object
        } else {
            CollisionClass::VehicleHuman
        }
    }

    pub fn of_pair(a: ObjectType, b: ObjectType) -> Self {
        if a.is_road_object() || b.is_road_object() {
            CollisionClass::Object
        } else {
            CollisionClass::VehicleHuman
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Contact {
    pub a: usize,
    pub b: usize,
    pub class: CollisionClass,
}

/// A footprint that participates in contact tests.
#[derive(Debug, Clone, Copy)]
pub struct Body {
    pub obb: Obb,
    pub object_type: ObjectType,
    pub alive: bool,
}

/// All overlapping pairs among live bodies, each reported once with `a < b`.
pub fn detect_collisions(bodies: &[Body]) -> Vec<Contact> {
    // Sweep along x so only boxes with overlapping x-extents are tested.
    let mut order: Vec<(f64, f64, usize)> = bodies
        .iter()
        .enumerate()
        .filter(|(_, b)| b.alive)
        .map(|(i, b)| {
            let r = b.obb.bounding_radius();
            (b.obb.center.x - r, b.obb.center.x + r, i)
        })
        .collect();
    order.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.2.cmp(&q.2)));
    let mut out = Vec::new();
    for (k, &(_, hi, i)) in order.iter().enumerate() {
        for &(lo_j, _, j) in &order[k + 1..] {
            if lo_j > hi {
                break;
            }
            if bodies[i].obb.overlaps(&bodies[j].obb) {
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                out.push(Contact {
                    a,
                    b,
                    class: CollisionClass::of_pair(bodies[a].object_type, bodies[b].object_type),
                });
            }
        }
    }
    out.sort_by_key(|c| (c.a, c.b));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;

    fn body(x: f64, y: f64, ty: ObjectType) -> Body {
        Body {
            obb: Obb::new(Vec2::new(x, y), 0.0, 4.0, 2.0),
            object_type: ty,
            alive: true,
        }
    }

    #[test]
    fn overlapping_and_apart() {
        let bodies = [
            body(0.0, 0.0, ObjectType::Vehicle),
            body(0.0, 0.0, ObjectType::Vehicle),
            body(4.001, 0.0, ObjectType::Vehicle),
            body(20.0, 0.0, ObjectType::Cone),
            body(21.0, 0.5, ObjectType::Vehicle),
        ];
        let contacts = detect_collisions(&bodies);
        assert_eq!(contacts.len(), 2);
        assert_eq!((contacts[0].a, contacts[0].b), (0, 1));
        assert_eq!(contacts[0].class, CollisionClass::VehicleHuman);
        assert_eq!((contacts[1].a, contacts[1].b, contacts[1].class), (3, 4, CollisionClass::Object));
    }

    #[test]
    fn dead_bodies_ignored() {
        let mut bodies = [body(0.0, 0.0, ObjectType::Vehicle), body(1.0, 0.0, ObjectType::Pedestrian)];
        bodies[1].alive = false;
        assert!(detect_collisions(&bodies).is_empty());
    }
}
