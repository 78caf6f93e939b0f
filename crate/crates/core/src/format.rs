/// Formats a float with 17 significant digits, enough for an exact decimal round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
