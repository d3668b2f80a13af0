use num_bigint::BigUint;

/// Rough size of the program space: `n_f^l * n_v^(n_a * l)` for `n_f`
/// functions, `n_v` variables, `n_a` arguments per statement and length `l`.
pub fn estimate_space(functions: u32, variables: u32, arity: u32, length: u32) -> BigUint {
    BigUint::from(functions).pow(length) * BigUint::from(variables).pow(arity * length)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    // Oracle: schoolbook repeated multiplication in u128.
    fn naive(f: u32, v: u32, a: u32, l: u32) -> u128 {
        let mut out: u128 = 1;
        for _ in 0..l {
            out *= f as u128;
        }
        for _ in 0..a * l {
            out *= v as u128;
        }
        out
    }

    #[test]
    fn examples() {
        assert_eq!(estimate_space(1, 5, 2, 3).to_string(), "15625");
        assert_eq!(estimate_space(2, 2, 1, 1).to_string(), "4");
        assert_eq!(
            estimate_space(45, 10, 2, 5).to_string(),
            naive(45, 10, 2, 5).to_string()
        );
        assert_eq!(estimate_space(45, 10, 2, 5).to_string(), "1845281250000000000");
    }

    #[test]
    fn large_values_do_not_overflow() {
        let big = estimate_space(43, 20, 2, 30);
        assert!(big.bits() > 128);
    }
}
