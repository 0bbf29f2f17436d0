//! Linear (P1) triangle geometry and quadrature rules shared by the FEM solvers.

use crate::physics::Point;

/// Geometry of one P1 triangle.
#[derive(Debug, Clone, Copy)]
pub struct P1Triangle {
    pub corners: [Point; 3],
    pub area: f64,
    /// Constant gradients of the three hat functions.
    pub grads: [[f64; 2]; 3],
}

impl P1Triangle {
    pub fn new(corners: [Point; 3]) -> Self {
        let [a, b, c] = corners;
        let area = crate::mesh::signed_area(a, b, c);
        let inv = 1.0 / (2.0 * area);
        let grads = [
            [(b[1] - c[1]) * inv, (c[0] - b[0]) * inv],
            [(c[1] - a[1]) * inv, (a[0] - c[0]) * inv],
            [(a[1] - b[1]) * inv, (b[0] - a[0]) * inv],
        ];
        Self { corners, area, grads }
    }

    /// Maps barycentric coordinates to a physical point.
    pub fn point(&self, lam: [f64; 3]) -> Point {
        let [a, b, c] = self.corners;
        [
            lam[0] * a[0] + lam[1] * b[0] + lam[2] * c[0],
            lam[0] * a[1] + lam[1] * b[1] + lam[2] * c[1],
        ]
    }

    /// Local stiffness matrix `area * grad(phi_i) . grad(phi_j)`.
    pub fn stiffness(&self) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = self.area * dot2(self.grads[i], self.grads[j]);
            }
        }
        k
    }

    /// Local consistent mass matrix.
    pub fn mass(&self) -> [[f64; 3]; 3] {
        let d = self.area / 6.0;
        let o = self.area / 12.0;
        [[d, o, o], [o, d, o], [o, o, d]]
    }

    /// Gradient of a P1 field with nodal values `u`.
    pub fn gradient(&self, u: [f64; 3]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for i in 0..3 {
            g[0] += u[i] * self.grads[i][0];
            g[1] += u[i] * self.grads[i][1];
        }
        g
    }
}

#[inline]
pub fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Edge-midpoint rule: exact for quadratics. Barycentric points, weights sum to 1.
pub const MIDPOINT_RULE: [([f64; 3], f64); 3] = [
    ([0.5, 0.5, 0.0], 1.0 / 3.0),
    ([0.0, 0.5, 0.5], 1.0 / 3.0),
    ([0.5, 0.0, 0.5], 1.0 / 3.0),
];

/// Seven-point degree-5 rule (Dunavant), used for error norms.
pub const DEGREE5_RULE: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_769_82;
    const B1: f64 = 0.470_142_064_105_115_1;
    const A2: f64 = 0.797_426_985_353_087_3;
    const B2: f64 = 0.101_286_507_323_456_3;
    const W1: f64 = 0.132_394_152_788_506_2;
    const W2: f64 = 0.125_939_180_544_827_1;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};
