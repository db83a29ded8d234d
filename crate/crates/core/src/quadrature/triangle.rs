use crate::error::{DgnnError, Result};
use crate::geometry::Point2;

use super::gauss::gauss_legendre_symmetric;
use super::{DomainKind, QuadRule};

/// Symmetry orbit of a fully symmetric triangle rule, in barycentric form.
#[derive(Debug, Clone, Copy)]
enum Orbit {
    /// Centroid.
    S3 { w: f64 },
    /// `(a, a, 1 − 2a)` and its 3 permutations.
    S21 { w: f64, a: f64 },
    /// `(a, b, 1 − a − b)` and its 6 permutations.
    S111 { w: f64, a: f64, b: f64 },
}

struct SymmetricRule {
    points: usize,
    degree: usize,
    orbits: &'static [Orbit],
}

// Weights are for the reference triangle of area 1/2.
const RULES: &[SymmetricRule] = &[
    SymmetricRule { points: 1, degree: 1, orbits: &[Orbit::S3 { w: 0.5 }] },
    SymmetricRule {
        points: 3,
        degree: 2,
        orbits: &[Orbit::S21 { w: 0.166_666_666_666_666_666_67, a: 0.166_666_666_666_666_666_67 }],
    },
    SymmetricRule {
        points: 6,
        degree: 4,
        orbits: &[
            Orbit::S21 { w: 0.111_690_794_839_005_732_85, a: 0.445_948_490_915_964_886_32 },
            Orbit::S21 { w: 0.054_975_871_827_660_933_819, a: 0.091_576_213_509_770_743_460 },
        ],
    },
    SymmetricRule {
        points: 12,
        degree: 6,
        orbits: &[
            Orbit::S21 { w: 0.058_393_137_863_189_683_013, a: 0.249_286_745_170_910_421_29 },
            Orbit::S21 { w: 0.025_422_453_185_103_408_460, a: 0.063_089_014_491_502_228_340 },
            Orbit::S111 { w: 0.041_425_537_809_186_787_597, a: 0.053_145_049_844_816_947_353, b: 0.310_352_451_033_784_405_42 },
        ],
    },
    SymmetricRule {
        points: 15,
        degree: 7,
        orbits: &[
            Orbit::S21 { w: 0.011754339552129502594, a: 0.040022726017189052962 },
            Orbit::S21 { w: 0.075889389157617133742, a: 0.42385204305003884097 },
            Orbit::S21 { w: 0.046523506739346507186, a: 0.14007410757583949149 },
            Orbit::S111 { w: 0.016249715608786761572, a: 0.0038989453250348882803, b: 0.31145143385229536014 },
        ],
    },
    SymmetricRule {
        points: 16,
        degree: 8,
        orbits: &[
            Orbit::S3 { w: 0.072_157_803_838_893_584_126 },
            Orbit::S21 { w: 0.047_545_817_133_642_312_397, a: 0.459_292_588_292_723_156_03 },
            Orbit::S21 { w: 0.051_608_685_267_359_125_141, a: 0.170_569_307_751_760_206_62 },
            Orbit::S21 { w: 0.016_229_248_811_599_040_155, a: 0.050_547_228_317_030_975_458 },
            Orbit::S111 { w: 0.013_615_157_087_217_497_132, a: 0.008_394_777_409_957_605_337_2, b: 0.263_112_829_634_638_113_42 },
        ],
    },
    SymmetricRule {
        points: 25,
        degree: 10,
        orbits: &[
            Orbit::S3 { w: 0.045_408_995_191_376_790_048 },
            Orbit::S21 { w: 0.018_362_978_878_233_352_359, a: 0.485_577_633_383_657_377_37 },
            Orbit::S21 { w: 0.022_660_529_717_763_967_391, a: 0.109_481_575_485_037_054_80 },
            Orbit::S111 { w: 0.036_378_958_422_710_054_302, a: 0.141_707_219_414_879_954_76, b: 0.307_939_838_764_120_950_17 },
            Orbit::S111 { w: 0.014_163_621_265_528_742_418, a: 0.025_003_534_762_686_386_074, b: 0.246_672_560_639_902_693_92 },
            Orbit::S111 { w: 0.004_710_833_481_866_411_730_0, a: 0.009_540_815_400_299_457_580_2, b: 0.066_803_251_012_200_265_774 },
        ],
    },
];

/// Point counts with a fully symmetric rule.
pub const SYMMETRIC_TRIANGLE_RULES: [usize; 7] = [1, 3, 6, 12, 15, 16, 25];

fn expand(rule: &SymmetricRule) -> QuadRule {
    let mut points: Vec<Point2> = Vec::with_capacity(rule.points);
    let mut weights = Vec::with_capacity(rule.points);
    // Cartesian (x̂, ŷ) are the 2nd and 3rd barycentric coordinates.
    let mut push = |l: [f64; 3], w: f64| {
        points.push([l[1], l[2]]);
        weights.push(w);
    };
    for orbit in rule.orbits {
        match *orbit {
            Orbit::S3 { w } => push([1.0 / 3.0; 3], w),
            Orbit::S21 { w, a } => {
                let b = 1.0 - 2.0 * a;
                for l in [[a, a, b], [a, b, a], [b, a, a]] {
                    push(l, w);
                }
            }
            Orbit::S111 { w, a, b } => {
                let c = 1.0 - a - b;
                for l in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
                    push(l, w);
                }
            }
        }
    }
    QuadRule { points, weights, exact_degree: rule.degree, domain: DomainKind::Triangle }
}

/// Gauss–Legendre tensor rule collapsed onto the triangle through the Duffy
/// map `x̂ = u, ŷ = v (1 − u)`, with `nu` points in `u` and `nv` in `v`.
fn collapsed(nu: usize, nv: usize) -> QuadRule {
    let (xu, wu) = gauss_legendre_symmetric(nu);
    let (xv, wv) = gauss_legendre_symmetric(nv);
    let mut points = Vec::with_capacity(nu * nv);
    let mut weights = Vec::with_capacity(nu * nv);
    for (a, wa) in xu.iter().zip(&wu) {
        let u = 0.5 * (a + 1.0);
        for (b, wb) in xv.iter().zip(&wv) {
            let v = 0.5 * (b + 1.0);
            points.push([u, v * (1.0 - u)]);
            weights.push(0.25 * wa * wb * (1.0 - u));
        }
    }
    // x^i y^j pulls back to u^i (1-u)^{j+1} v^j.
    let exact_degree = (2 * nu - 2).min(2 * nv - 1);
    QuadRule { points, weights, exact_degree, domain: DomainKind::Triangle }
}

/// Quadrature rule on the reference triangle with exactly `n_points` points.
///
/// Counts in [`SYMMETRIC_TRIANGLE_RULES`] use fully symmetric tables. Any
/// other count of the form `m²` or `m (m + 1)` (e.g. 4, 9, 20, 30) falls back
/// to the collapsed tensor rule with `m + 1` points along the collapsed
/// direction where applicable.
pub fn triangle_rule(n_points: usize) -> Result<QuadRule> {
    if let Some(r) = RULES.iter().find(|r| r.points == n_points) {
        return Ok(expand(r));
    }
    let m = (n_points as f64).sqrt().floor() as usize;
    if m >= 2 && m * m == n_points {
        return Ok(collapsed(m, m));
    }
    if m >= 2 && m * (m + 1) == n_points {
        return Ok(collapsed(m + 1, m));
    }
    Err(DgnnError::UnsupportedRule(format!(
        "no triangle rule with {n_points} points (symmetric: {SYMMETRIC_TRIANGLE_RULES:?}, or m² / m(m+1))"
    )))
}
