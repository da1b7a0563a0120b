//! Shared formulas for metrics of the form g = e^{2φ}δ in dimension n whose
//! curvature is K·(g∧g) (all of dimension two, and the hyperbolic ball).

use super::{Christoffel, FrameTensors, Matrix, Vector};

pub(super) fn christoffel(grad_phi: &Vector) -> Christoffel {
    let n = grad_phi.len();
    let mut c = Christoffel::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut v = 0.0;
                if k == i {
                    v += grad_phi[j];
                }
                if k == j {
                    v += grad_phi[i];
                }
                if i == j {
                    v -= grad_phi[k];
                }
                c.set(k, i, j, v);
            }
        }
    }
    c
}

pub(super) fn christoffel_contract(grad_phi: &Vector, a: &Vector, b: &Vector) -> Vector {
    a * grad_phi.dot(b) + b * grad_phi.dot(a) - grad_phi * a.dot(b)
}

/// K(⟨b,c⟩a − ⟨a,c⟩b) with ⟨·,·⟩ = e^{2φ}δ.
pub(super) fn riemann(scale: f64, k: f64, a: &Vector, b: &Vector, c: &Vector) -> Vector {
    (a * b.dot(c) - b * a.dot(c)) * (k * scale)
}

pub(super) fn frame_tensors(u: &Matrix, k: f64, grad_k: Option<&Vector>) -> FrameTensors {
    let n = u.ncols();
    let dk = match grad_k {
        Some(gk) => u.transpose() * gk,
        None => Vector::zeros(n),
    };
    FrameTensors::ScalarCurvature { n, k, dk }
}
