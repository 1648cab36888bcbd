//! Decibel conversions. Every quantity converted here is a power ratio,
//! so the convention is `10·log10` throughout.

#[inline]
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[inline]
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for db in [-200.0, -3.0, 0.0, 10.0, 42.5] {
            assert!((linear_to_db(db_to_linear(db)) - db).abs() < 1e-10);
        }
        assert_eq!(db_to_linear(10.0), 10.0);
        assert_eq!(db_to_linear(0.0), 1.0);
    }
}
