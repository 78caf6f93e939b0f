/// A smooth cumulative curve with its first three derivatives.
pub trait Curve {
    /// `[CR(t), CR'(t), CR''(t), CR'''(t)]`
    fn derivatives(&self, t: f64) -> [f64; 4];

    fn value(&self, t: f64) -> f64 {
        self.derivatives(t)[0]
    }
}

impl<C: Curve + ?Sized> Curve for &C {
    fn derivatives(&self, t: f64) -> [f64; 4] {
        (**self).derivatives(t)
    }
}
