//! Planar similarity transforms mapping image-A coordinates to image B.

use serde::{Deserialize, Serialize};

/// `p_b = scale * R(rotation) * p_a + (tx, ty)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: f64,
    pub tx: f64,
    pub ty: f64,
}

impl Default for Similarity {
    fn default() -> Self {
        Self::identity()
    }
}

impl Similarity {
    pub fn identity() -> Self {
        Self::translation(0.0, 0.0)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            scale: 1.0,
            rotation: 0.0,
            tx,
            ty,
        }
    }

    pub fn is_invertible(&self) -> bool {
        self.scale.is_finite() && self.scale > 0.0 && self.rotation.is_finite()
            && self.tx.is_finite() && self.ty.is_finite()
    }

    pub fn is_translation(&self) -> bool {
        self.scale == 1.0 && self.rotation == 0.0
    }

    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        if self.is_translation() {
            return (x + self.tx, y + self.ty);
        }
        let (s, c) = self.rotation.sin_cos();
        (
            self.scale * (c * x - s * y) + self.tx,
            self.scale * (s * x + c * y) + self.ty,
        )
    }

    pub fn inverse(&self) -> Self {
        let scale = 1.0 / self.scale;
        let rotation = -self.rotation;
        let (s, c) = rotation.sin_cos();
        Self {
            scale,
            rotation,
            tx: -scale * (c * self.tx - s * self.ty),
            ty: -scale * (s * self.tx + c * self.ty),
        }
    }

    /// Distance between `apply(a)` and `b`.
    pub fn residual(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let (x, y) = self.apply(a);
        ((x - b.0).powi(2) + (y - b.1).powi(2)).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let t = Similarity {
            scale: 1.3,
            rotation: 2.1,
            tx: -4.0,
            ty: 7.5,
        };
        let inv = t.inverse();
        for p in [(0.0, 0.0), (10.0, -3.0), (-2.5, 8.0)] {
            let q = inv.apply(t.apply(p));
            assert!((q.0 - p.0).abs() < 1e-12 && (q.1 - p.1).abs() < 1e-12);
        }
        assert_eq!(Similarity::translation(3.0, -1.0).apply((1.0, 1.0)), (4.0, 0.0));
    }
}
