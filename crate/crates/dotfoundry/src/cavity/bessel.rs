//! Bessel functions of the first kind and their positive zeros, for the
//! small integer orders guided-mode calculations need.
//!
//! Evaluation strategy: ascending power series for x <= 14 (largest
//! series term stays below ~3e4 for orders <= 10, keeping cancellation
//! error near 1e-11), Hankel asymptotic expansions for J0/J1 beyond,
//! and forward recurrence for higher orders there (stable because the
//! argument then exceeds the order).

use super::CavityError;

/// Largest order/index the zero finder supports.
pub const MAX_ORDER: u32 = 10;
pub const MAX_ZERO_INDEX: u32 = 10;

const SERIES_CUTOFF: f64 = 14.0;

/// J_n(x) for n <= 10, accurate to ~1e-10 absolute over the range the
/// zero finder visits (x up to ~50).
pub fn bessel_j(order: u32, x: f64) -> f64 {
    debug_assert!(order <= MAX_ORDER, "order {order} unsupported");
    let ax = x.abs();
    let sign = if x < 0.0 && order % 2 == 1 { -1.0 } else { 1.0 };
    let value = if ax <= SERIES_CUTOFF {
        series(order, ax)
    } else if order <= 1 {
        hankel(order, ax)
    } else {
        let mut below = hankel(0, ax);
        let mut current = hankel(1, ax);
        for k in 1..order {
            let next = (2.0 * k as f64 / ax) * current - below;
            below = current;
            current = next;
        }
        current
    };
    sign * value
}

/// Ascending series sum_k (-1)^k (x/2)^(n+2k) / (k! (n+k)!).
fn series(n: u32, x: f64) -> f64 {
    let half = x / 2.0;
    let q = half * half;
    let mut term = 1.0;
    for k in 1..=n {
        term *= half / k as f64;
    }
    let mut sum = term;
    for k in 1..=60u32 {
        term *= -q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// Hankel expansion J_n(x) = sqrt(2/(pi x)) (P cos(chi) - Q sin(chi)),
/// chi = x - (2n+1) pi/4, truncated at the smallest term.
fn hankel(order: u32, x: f64) -> f64 {
    let mu = 4.0 * (order as f64) * (order as f64);
    let mut p = 0.0;
    let mut q = 0.0;
    let mut c = 1.0_f64;
    let mut previous = f64::INFINITY;
    for m in 0..32u32 {
        if c.abs() >= previous {
            break;
        }
        let sign = if (m / 2) % 2 == 0 { 1.0 } else { -1.0 };
        if m % 2 == 0 {
            p += sign * c;
        } else {
            q += sign * c;
        }
        if c.abs() < 1e-18 {
            break;
        }
        previous = c.abs();
        let odd = (2 * m + 1) as f64;
        c *= (mu - odd * odd) / ((m as f64 + 1.0) * 8.0 * x);
    }
    let phase = x - (2.0 * order as f64 + 1.0) * std::f64::consts::FRAC_PI_4;
    (2.0 / (std::f64::consts::PI * x)).sqrt() * (p * phase.cos() - q * phase.sin())
}

/// The (index+1)-th positive zero of J_order, to 1e-9 absolute.
/// Brackets by scanning in 0.25 steps (consecutive zeros are more than
/// 3 apart) and refines by bisection.
pub fn bessel_zero(order: u32, index: u32) -> Result<f64, CavityError> {
    if order > MAX_ORDER || index > MAX_ZERO_INDEX {
        return Err(CavityError::UnsupportedBessel { order, index });
    }
    // J_n > 0 between 0 and its first zero, which lies above n.
    let mut lo = if order == 0 { 0.1 } else { order as f64 + 0.1 };
    let step = 0.25;
    let mut f_lo = bessel_j(order, lo);
    let mut found = 0u32;
    while lo < 120.0 {
        let hi = lo + step;
        let f_hi = bessel_j(order, hi);
        if f_lo * f_hi < 0.0 {
            if found == index {
                return Ok(bisect(order, lo, hi, f_lo));
            }
            found += 1;
        }
        lo = hi;
        f_lo = f_hi;
    }
    unreachable!("zero scan ran past x = 120 for order {order}, index {index}")
}

fn bisect(order: u32, mut lo: f64, mut hi: f64, mut f_lo: f64) -> f64 {
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-13 {
            return mid;
        }
        let f_mid = bessel_j(order, mid);
        if f_mid == 0.0 {
            return mid;
        }
        if f_lo * f_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            f_lo = f_mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference zeros computed with arbitrary-precision arithmetic.
    const J0_ZEROS: [f64; 4] =
        [2.404825557695773, 5.520078110286311, 8.653727912911013, 11.791534439014281];
    const J1_ZEROS: [f64; 3] = [3.831705970207512, 7.015586669815619, 10.173468135062722];
    const J10_FIRST_ZERO: f64 = 14.475500686554541;

    #[test]
    fn zeros_match_reference_values_to_1e9() {
        for (i, want) in J0_ZEROS.iter().enumerate() {
            let got = bessel_zero(0, i as u32).unwrap();
            assert!((got - want).abs() < 1e-9, "j0_{i}: {got} vs {want}");
        }
        for (i, want) in J1_ZEROS.iter().enumerate() {
            let got = bessel_zero(1, i as u32).unwrap();
            assert!((got - want).abs() < 1e-9, "j1_{i}: {got} vs {want}");
        }
        let got = bessel_zero(10, 0).unwrap();
        assert!((got - J10_FIRST_ZERO).abs() < 1e-9, "j10_0: {got}");
    }

    #[test]
    fn small_argument_values_are_exact() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        assert_eq!(bessel_j(3, 0.0), 0.0);
        // Odd orders are odd functions, even orders even.
        assert_eq!(bessel_j(1, -2.3), -bessel_j(1, 2.3));
        assert_eq!(bessel_j(2, -2.3), bessel_j(2, 2.3));
    }

    #[test]
    fn series_and_asymptotic_paths_agree_where_both_converge() {
        for order in [0u32, 1, 2, 5, 10] {
            for x in [14.5, 16.0, 18.0] {
                let from_series = series(order, x);
                let from_large_x = bessel_j(order, x);
                assert!(
                    (from_series - from_large_x).abs() < 5e-9,
                    "order {order}, x {x}: {from_series} vs {from_large_x}"
                );
            }
        }
    }

    #[test]
    fn zeros_increase_strictly_with_index() {
        for order in 0..=MAX_ORDER {
            let mut last = 0.0;
            for index in 0..=MAX_ZERO_INDEX {
                let z = bessel_zero(order, index).unwrap();
                assert!(z > last, "order {order}, index {index}");
                last = z;
            }
        }
    }

    #[test]
    fn zeros_of_adjacent_orders_interlace() {
        for order in 0..MAX_ORDER {
            for index in 0..MAX_ZERO_INDEX {
                let a = bessel_zero(order, index).unwrap();
                let b = bessel_zero(order + 1, index).unwrap();
                let c = bessel_zero(order, index + 1).unwrap();
                assert!(a < b && b < c, "order {order}, index {index}: {a} {b} {c}");
            }
        }
    }

    #[test]
    fn unsupported_orders_and_indices_are_rejected() {
        assert!(matches!(
            bessel_zero(11, 0),
            Err(CavityError::UnsupportedBessel { order: 11, index: 0 })
        ));
        assert!(matches!(
            bessel_zero(0, 11),
            Err(CavityError::UnsupportedBessel { order: 0, index: 11 })
        ));
    }
}
