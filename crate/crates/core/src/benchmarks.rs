//! Reference models used by the tests, the acceptance suite and the example
//! configurations.

use crate::model::{Domain, JumpProfile, ModelSpec, MutationKernel, Profile};

/// `I = [−1, 1]`, `r = 1 − x²`, `u(x, y) = ½`. The equilibrium is
/// `p(x) = ½ / (λ + x²)` with `arctan(1/√λ)/√λ = 1`.
pub fn house_of_cards() -> ModelSpec {
    ModelSpec::new(
        Domain::Compact { a: -1.0, b: 1.0 },
        Profile::Quadratic {
            peak: 1.0,
            curvature: 1.0,
        },
        MutationKernel::HouseOfCards {
            mu: 1.0,
            density: Profile::Constant { value: 0.5 },
        },
    )
}

/// `I = [−1, 1]`, `r = 1 − x²`, gaussian-difference kernel with `σ = 0.3`.
pub fn gaussian_compact() -> ModelSpec {
    ModelSpec::new(
        Domain::Compact { a: -1.0, b: 1.0 },
        Profile::Quadratic {
            peak: 1.0,
            curvature: 1.0,
        },
        MutationKernel::GaussianDifference { mu: 1.0, sigma: 0.3 },
    )
}

/// Real line truncated to `[−4·2^(n/2), 4·2^(n/2)]` at level `n ≤ 4`,
/// `r = exp(−x²)`, gaussian-difference kernel with `σ = 0.3`, 128 cells at
/// level 0.
pub fn gaussian_real_line() -> ModelSpec {
    ModelSpec::new(
        Domain::RealLine { l0: 4.0, max_level: 4 },
        Profile::Gaussian {
            amplitude: 1.0,
            scale: 1.0,
        },
        MutationKernel::GaussianDifference { mu: 1.0, sigma: 0.3 },
    )
    .with_base_cells(128)
}

/// Every benchmark with a short name, in a fixed order.
pub fn all() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("house-of-cards", house_of_cards()),
        ("gaussian-compact", gaussian_compact()),
        ("gaussian-real-line", gaussian_real_line()),
    ]
}

/// `u(x, y) = exp(γ(x − y)) · ν · h(ν|x − y|)` with gaussian `h` of mass `μ`
/// and width `σ`, on `[−3, 3]` with `r = exp(−x²)`.
pub fn tilted_gaussian(gamma: f64, nu: f64) -> ModelSpec {
    ModelSpec::new(
        Domain::Compact { a: -3.0, b: 3.0 },
        Profile::Gaussian {
            amplitude: 1.0,
            scale: 1.0,
        },
        MutationKernel::ExponentialTilted {
            gamma,
            nu,
            jump: JumpProfile::Gaussian { mass: 1.0, sigma: 0.3 },
        },
    )
}
