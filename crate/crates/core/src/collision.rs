//! Sphere-chain self-collision and ground-plane penetration cost.
//!
//! Each link carries a handful of spheres placed in its local frame (see
//! [`crate::kinematics::link_frames`]). The cost of a configuration is the
//! summed penetration depth, in meters, of every pair of spheres on
//! non-adjacent links plus every non-base sphere against the plane `z = 0`,
//! each inflated by the safety margin.

use serde::{Deserialize, Serialize};

use crate::geometry::Point3;
use crate::kinematics::{link_frames, RobotModel, NUM_LINKS};
use crate::scalar::Real;
use crate::trajectory::JointConfig;

/// One collision sphere attached to a link.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereSpec<T> {
    /// 0 base column, 1 upper arm, 2 forearm, 3 tool.
    pub link: usize,
    pub offset: Point3<T>,
    pub radius: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionModel<T> {
    pub margin: T,
    pub ground_plane: bool,
    pub spheres: Vec<SphereSpec<T>>,
}

impl<T: Real> CollisionModel<T> {
    /// Three spheres per link at both ends and the midpoint, matched to the
    /// canonical link lengths.
    pub fn canonical() -> Self {
        let c = T::of;
        let along_z = |link: usize, zs: [f64; 3], r: f64| {
            zs.map(|z| SphereSpec {
                link,
                offset: Point3::new(T::zero(), T::zero(), c(z)),
                radius: c(r),
            })
        };
        let mut spheres = Vec::with_capacity(12);
        spheres.extend(along_z(0, [0.04, 0.08, 0.12], 0.035));
        spheres.extend(along_z(1, [0.0, 0.055, 0.11], 0.03));
        spheres.extend(along_z(2, [0.0, 0.048, 0.096], 0.025));
        spheres.extend([0.0, 0.025, 0.05].map(|x| SphereSpec {
            link: 3,
            offset: Point3::new(c(x), T::zero(), T::zero()),
            radius: c(0.025),
        }));
        Self {
            margin: c(0.005),
            ground_plane: true,
            spheres,
        }
    }

    pub fn cast<U: Real>(&self) -> CollisionModel<U> {
        CollisionModel {
            margin: U::of(self.margin.to_f64_lossless()),
            ground_plane: self.ground_plane,
            spheres: self
                .spheres
                .iter()
                .map(|s| SphereSpec {
                    link: s.link,
                    offset: s.offset.cast(),
                    radius: U::of(s.radius.to_f64_lossless()),
                })
                .collect(),
        }
    }
}

/// A single offending contact, indices into the model's sphere list.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Contact<T> {
    Pair { a: usize, b: usize, depth: T },
    Ground { sphere: usize, depth: T },
}

impl<T: Real> Contact<T> {
    pub fn depth(&self) -> T {
        match self {
            Contact::Pair { depth, .. } | Contact::Ground { depth, .. } => *depth,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionReport<T> {
    /// Total penetration depth in meters, zero iff `contacts` is empty.
    pub cost: T,
    pub contacts: Vec<Contact<T>>,
}

impl<T: Real> CollisionReport<T> {
    pub fn is_free(&self) -> bool {
        self.contacts.is_empty()
    }
}

/// World centers of every sphere at configuration `q`.
pub fn sphere_centers<T: Real>(model: &RobotModel<T>, q: &JointConfig<T>) -> Vec<Point3<T>> {
    let frames = link_frames(model, q);
    model
        .collision
        .spheres
        .iter()
        .map(|s| frames[s.link.min(NUM_LINKS - 1)].transform(s.offset))
        .collect()
}

pub fn collision_cost<T: Real>(model: &RobotModel<T>, q: &JointConfig<T>) -> CollisionReport<T> {
    let centers = sphere_centers(model, q);
    let spheres = &model.collision.spheres;
    let margin = model.collision.margin;
    let mut cost = T::zero();
    let mut contacts = Vec::new();

    for i in 0..spheres.len() {
        for j in (i + 1)..spheres.len() {
            if spheres[i].link.abs_diff(spheres[j].link) < 2 {
                continue;
            }
            let gap = spheres[i].radius + spheres[j].radius + margin - centers[i].distance(centers[j]);
            if gap > T::zero() {
                cost += gap;
                contacts.push(Contact::Pair { a: i, b: j, depth: gap });
            }
        }
    }

    if model.collision.ground_plane {
        // The base column is bolted to the plane.
        for (i, (s, c)) in spheres.iter().zip(centers.iter()).enumerate() {
            if s.link == 0 {
                continue;
            }
            let gap = s.radius + margin - c.z;
            if gap > T::zero() {
                cost += gap;
                contacts.push(Contact::Ground { sphere: i, depth: gap });
            }
        }
    }

    CollisionReport { cost, contacts }
}

/// Cost at every frame. Frames with a positive entry form the collision set.
pub fn batch_collision_cost<T: Real>(model: &RobotModel<T>, frames: &[JointConfig<T>]) -> Vec<T> {
    frames.iter().map(|q| collision_cost(model, q).cost).collect()
}

/// Indices of frames with positive collision cost.
pub fn collision_set<T: Real>(model: &RobotModel<T>, frames: &[JointConfig<T>]) -> Vec<usize> {
    batch_collision_cost(model, frames)
        .into_iter()
        .enumerate()
        .filter(|(_, c)| *c > T::zero())
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::forward_kinematics;
    use proptest::prelude::*;

    fn model() -> RobotModel<f64> {
        RobotModel::canonical()
    }

    fn q(a: [f64; 6]) -> JointConfig<f64> {
        JointConfig(a)
    }

    /// Brute-force check over the explicit sphere list, written without the
    /// link frames: sphere centers are rebuilt from the FK reference points.
    fn oracle_cost(m: &RobotModel<f64>, cfg: &JointConfig<f64>) -> f64 {
        let pts = forward_kinematics(m, cfg);
        let up = |from: Point3<f64>, to: Point3<f64>, len: f64, d: f64| from + (to - from) * (d / len);
        let mut placed: Vec<(usize, Point3<f64>, f64)> = Vec::new();
        for s in &m.collision.spheres {
            let c = match s.link {
                0 => s.offset,
                1 => up(pts.shoulder, pts.b, m.upper_link, s.offset.z),
                2 => up(pts.b, pts.c, m.fore_link, s.offset.z),
                _ => up(pts.c, pts.d, m.tool_offset, s.offset.x),
            };
            placed.push((s.link, c, s.radius));
        }
        let mut total = 0.0;
        for (i, a) in placed.iter().enumerate() {
            for b in placed.iter().skip(i + 1) {
                if a.0.abs_diff(b.0) >= 2 {
                    total += (a.2 + b.2 + m.collision.margin - a.1.distance(b.1)).max(0.0);
                }
            }
            if a.0 != 0 {
                total += (a.2 + m.collision.margin - a.1.z).max(0.0);
            }
        }
        total
    }

    #[test]
    fn upright_is_free() {
        let m = model();
        let r = collision_cost(&m, &JointConfig::zeros());
        assert_eq!(r.cost, 0.0);
        assert!(r.is_free());
        assert_eq!(oracle_cost(&m, &JointConfig::zeros()), 0.0);
    }

    #[test]
    fn folded_elbow_matches_two_sphere_construction() {
        // One oversized sphere at C on the forearm and one at the shoulder on the
        // upper arm; folding the elbow to the limit brings them together.
        let mut m = model();
        m.collision.spheres = vec![
            SphereSpec {
                link: 1,
                offset: Point3::zero(),
                radius: 0.05,
            },
            SphereSpec {
                link: 3,
                offset: Point3::zero(),
                radius: 0.04,
            },
        ];
        let cfg = q([0.0, 0.3, 2.88, 0.0, 0.0, 0.0]);
        // Law of cosines: |shoulder - C|^2 = l2^2 + l3^2 - 2 l2 l3 cos(pi - theta3).
        let (l2, l3) = (m.upper_link, m.fore_link);
        let dist = (l2 * l2 + l3 * l3 - 2.0 * l2 * l3 * (std::f64::consts::PI - 2.88).cos()).sqrt();
        let expected = 0.05 + 0.04 + 0.005 - dist;
        assert!(expected > 0.0);
        let r = collision_cost(&m, &cfg);
        assert!((r.cost - expected).abs() < 1e-12, "{} vs {}", r.cost, expected);
        assert_eq!(r.contacts.len(), 1);
    }

    #[test]
    fn canonical_fold_collides() {
        let m = model();
        let r = collision_cost(&m, &q([0.0, 0.3, 2.88, 0.0, 0.0, 0.0]));
        assert!(r.cost > 0.0);
    }

    #[test]
    fn below_ground_is_penalized() {
        let m = model();
        // Shoulder pitched past horizontal: C dips below the table.
        let cfg = q([0.0, 2.5, 0.0, -2.5, 0.0, 0.0]);
        assert!(forward_kinematics(&m, &cfg).c.z < 0.0);
        let r = collision_cost(&m, &cfg);
        assert!(r.contacts.iter().any(|c| matches!(c, Contact::Ground { .. })));
        let mut no_ground = m.clone();
        no_ground.collision.ground_plane = false;
        let r2 = collision_cost(&no_ground, &cfg);
        assert!(r2.cost < r.cost);
    }

    #[test]
    fn batch_marks_injected_frame() {
        let m = model();
        let mut frames = vec![JointConfig::zeros(); 5];
        assert_eq!(batch_collision_cost(&m, &frames), vec![0.0; 5]);
        frames[2] = q([0.0, 0.3, 2.88, 0.0, 0.0, 0.0]);
        let costs = batch_collision_cost(&m, &frames);
        assert_eq!(costs.iter().filter(|c| **c > 0.0).count(), 1);
        assert!(costs[2] > 0.0);
        assert_eq!(collision_set(&m, &frames), vec![2]);
        assert!(batch_collision_cost(&m, &[]).is_empty());
    }

    fn any_config() -> impl Strategy<Value = JointConfig<f64>> {
        proptest::array::uniform6(-2.88..2.88f64).prop_map(JointConfig)
    }

    proptest! {
        #[test]
        fn matches_oracle_and_is_consistent(cfg in any_config()) {
            let m = model();
            let r = collision_cost(&m, &cfg);
            prop_assert!(r.cost >= 0.0);
            prop_assert_eq!(r.cost == 0.0, r.contacts.is_empty());
            prop_assert!((r.cost - oracle_cost(&m, &cfg)).abs() < 1e-12);
            let summed: f64 = r.contacts.iter().map(|c| c.depth()).sum();
            prop_assert!((summed - r.cost).abs() < 1e-12);
        }

        #[test]
        fn margin_is_monotone(cfg in any_config(), extra in 0.0..0.02f64) {
            let m = model();
            let mut wider = m.clone();
            wider.collision.margin += extra;
            prop_assert!(collision_cost(&wider, &cfg).cost >= collision_cost(&m, &cfg).cost);
        }

        #[test]
        fn cost_is_continuous(cfg in any_config(), j in 0usize..6) {
            let m = model();
            let mut nudged = cfg;
            nudged.0[j] += 1e-7;
            let d = (collision_cost(&m, &nudged).cost - collision_cost(&m, &cfg).cost).abs();
            // Each contact moves at most (reach + tool) * dtheta.
            prop_assert!(d <= 200.0 * 0.4 * 1e-7);
        }
    }
}
