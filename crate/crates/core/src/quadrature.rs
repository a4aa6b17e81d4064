//! Symmetric quadrature rules on the reference triangle `{(x, y): x, y >= 0, x + y <= 1}`.
//!
//! The orbit tables below are the classical Dunavant point sets. At first use
//! the orbit parameters are polished by Gauss-Newton on the moment equations so
//! that every rule is exact to machine precision.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    /// Barycentric coordinates `(l0, l1, l2)`; the reference point is `(l1, l2)`.
    pub points: Vec<[f64; 3]>,
    /// Weights summing to the reference area `1/2`.
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference coordinates `(x, y)` of each point.
    pub fn reference_points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.points.iter().map(|l| [l[1], l[2]])
    }
}

#[derive(Clone, Copy, Debug)]
enum Orbit {
    /// Barycenter, weight.
    Centroid(f64),
    /// `(a, a, 1 - 2a)` and permutations, weight.
    Edge(f64, f64),
    /// `(a, b, 1 - a - b)` and all six permutations, weight.
    General(f64, f64, f64),
}

impl Orbit {
    fn params(&self) -> Vec<f64> {
        match *self {
            Orbit::Centroid(w) => vec![w],
            Orbit::Edge(a, w) => vec![a, w],
            Orbit::General(a, b, w) => vec![a, b, w],
        }
    }

    fn with_params(&self, p: &[f64]) -> Orbit {
        match self {
            Orbit::Centroid(_) => Orbit::Centroid(p[0]),
            Orbit::Edge(..) => Orbit::Edge(p[0], p[1]),
            Orbit::General(..) => Orbit::General(p[0], p[1], p[2]),
        }
    }

    /// Expands into points with weights normalized to unit total area.
    fn expand(&self, out: &mut Vec<([f64; 3], f64)>) {
        match *self {
            Orbit::Centroid(w) => out.push(([1.0 / 3.0; 3], w)),
            Orbit::Edge(a, w) => {
                let c = 1.0 - 2.0 * a;
                out.extend([([a, a, c], w), ([a, c, a], w), ([c, a, a], w)]);
            }
            Orbit::General(a, b, w) => {
                let c = 1.0 - a - b;
                out.extend([
                    ([a, b, c], w),
                    ([a, c, b], w),
                    ([b, a, c], w),
                    ([b, c, a], w),
                    ([c, a, b], w),
                    ([c, b, a], w),
                ]);
            }
        }
    }
}

fn orbit_table(degree: usize) -> (usize, Vec<Orbit>) {
    use Orbit::*;
    match degree {
        1 => (1, vec![Centroid(1.0)]),
        2 => (2, vec![Edge(1.0 / 6.0, 1.0 / 3.0)]),
        3 => (3, vec![General(0.659027622374092, 0.231933368553031, 1.0 / 6.0)]),
        4 => (
            4,
            vec![Edge(0.445948490915965, 0.223381589678011), Edge(0.091576213509771, 0.109951743655322)],
        ),
        5 => (
            5,
            vec![
                Centroid(0.225),
                Edge(0.470142064105115, 0.132394152788506),
                Edge(0.101286507323456, 0.125939180544827),
            ],
        ),
        6 => (
            6,
            vec![
                Edge(0.249286745170910, 0.116786275726379),
                Edge(0.063089014491502, 0.050844906370207),
                General(0.053145049844817, 0.310352451033784, 0.082851075618374),
            ],
        ),
        7 | 8 => (
            8,
            vec![
                Centroid(0.144315607677787),
                Edge(0.459292588292723, 0.095091634267285),
                Edge(0.170569307751760, 0.103217370534718),
                Edge(0.050547228317031, 0.032458497623198),
                General(0.008394777409958, 0.263112829634638, 0.027230314174435),
            ],
        ),
        9 => (
            9,
            vec![
                Centroid(0.097135796282799),
                Edge(0.489682519198738, 0.031334700227139),
                Edge(0.437089591492937, 0.077827541004774),
                Edge(0.188203535619033, 0.079647738927210),
                Edge(0.044729513394453, 0.025577675658698),
                General(0.036838412054736, 0.221962989160766, 0.043283539377289),
            ],
        ),
        10 => (
            10,
            vec![
                Centroid(0.090817990382754),
                Edge(0.485577633383657, 0.036725957756467),
                Edge(0.109481575485037, 0.045321059435528),
                General(0.141707219414880, 0.307939838764121, 0.072757916845420),
                General(0.025003534762686, 0.246672560639903, 0.028327242531057),
                General(0.009540815400299, 0.066803251012200, 0.009421666963733),
            ],
        ),
        _ => unreachable!(),
    }
}

/// Exact integral of `x^p y^q` over the reference triangle: `p! q! / (p + q + 2)!`.
pub fn monomial_integral(p: u32, q: u32) -> f64 {
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    fact(p) * fact(q) / fact(p + q + 2)
}

fn moment_residual(orbits: &[Orbit], degree: usize) -> Vec<f64> {
    let mut pts = Vec::new();
    for o in orbits {
        o.expand(&mut pts);
    }
    let mut r = Vec::new();
    for total in 0..=degree as u32 {
        for p in 0..=total {
            let q = total - p;
            let sum: f64 = pts.iter().map(|(l, w)| 0.5 * w * l[1].powi(p as i32) * l[2].powi(q as i32)).sum();
            r.push(sum - monomial_integral(p, q));
        }
    }
    r
}

fn polish(orbits: &[Orbit], degree: usize) -> Vec<Orbit> {
    let mut params: Vec<f64> = orbits.iter().flat_map(|o| o.params()).collect();
    let rebuild = |params: &[f64]| {
        let mut k = 0;
        orbits
            .iter()
            .map(|o| {
                let n = o.params().len();
                let out = o.with_params(&params[k..k + n]);
                k += n;
                out
            })
            .collect::<Vec<_>>()
    };
    for _ in 0..6 {
        let r0 = moment_residual(&rebuild(&params), degree);
        let mut jac = DMatrix::zeros(r0.len(), params.len());
        for j in 0..params.len() {
            let step = 1e-7;
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[j] += step;
            minus[j] -= step;
            let rp = moment_residual(&rebuild(&plus), degree);
            let rm = moment_residual(&rebuild(&minus), degree);
            for i in 0..r0.len() {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * step);
            }
        }
        let rhs = DVector::from_vec(r0.iter().map(|x| -x).collect());
        let Ok(delta) = jac.svd(true, true).solve(&rhs, 1e-12) else { break };
        for (p, d) in params.iter_mut().zip(delta.iter()) {
            *p += d;
        }
    }
    rebuild(&params)
}

fn build(degree: usize) -> QuadratureRule {
    let (exact, orbits) = orbit_table(degree);
    let orbits = polish(&orbits, exact);
    let mut pts = Vec::new();
    for o in &orbits {
        o.expand(&mut pts);
    }
    QuadratureRule {
        points: pts.iter().map(|(l, _)| *l).collect(),
        weights: pts.iter().map(|(_, w)| 0.5 * w).collect(),
        exactness_degree: exact,
    }
}

/// Symmetric rule integrating all polynomials of total degree `<= exactness_degree`
/// exactly. Requests for degree 7 return the degree-8 rule.
pub fn quadrature_rule(exactness_degree: usize) -> Result<&'static QuadratureRule> {
    static RULES: [OnceLock<QuadratureRule>; 10] = [const { OnceLock::new() }; 10];
    if !(1..=10).contains(&exactness_degree) {
        return Err(invalid(format!("no quadrature rule of degree {exactness_degree} (supported: 1..=10)")));
    }
    Ok(RULES[exactness_degree - 1].get_or_init(|| build(exactness_degree)))
}
