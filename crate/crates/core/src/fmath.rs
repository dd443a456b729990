//! Float helpers for `no_std`: transcendentals come from `libm`, which is
//! deterministic across platforms; everything else is plain core arithmetic.

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn log10(x: f64) -> f64 {
    libm::log10(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub fn pow(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn round(x: f64) -> f64 {
    libm::round(x)
}

/// Round half-up, the convention used when quantizing to 8-bit.
pub fn round_half_up(x: f64) -> f64 {
    libm::floor(x + 0.5)
}
