//! Monotone piecewise-linear lifts to the universal cover.
//!
//! A [`MonotoneLift`] stores one period of a nondecreasing function
//! `F: R -> R` with `F(x + P) = F(x) + Y`. Jumps are encoded as two knots
//! sharing the same abscissa, plateaus as two knots sharing the same ordinate.
//! Swapping the coordinates of every knot therefore yields the generalized
//! inverse, which is how CDFs become quantile functions.

use crate::error::{Error, Result};

/// Which one-sided value to return at a jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Left limit (the lower value of a jump).
    Left,
    /// Right limit (the upper value of a jump).
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneLift {
    knots: Vec<(f64, f64)>,
    x_period: f64,
    y_period: f64,
}

impl MonotoneLift {
    /// Builds a lift from knots covering exactly one period.
    ///
    /// The first and last abscissae must differ by `x_period` and the
    /// ordinates by `y_period`; both coordinates must be nondecreasing.
    pub fn new(knots: Vec<(f64, f64)>, x_period: f64, y_period: f64) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidArgument("a lift needs at least two knots".into()));
        }
        if !(x_period > 0.0) || !(y_period >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "periods must be positive (got {x_period}, {y_period})"
            )));
        }
        for w in knots.windows(2) {
            if w[1].0 < w[0].0 || w[1].1 < w[0].1 {
                return Err(Error::InvalidArgument(format!(
                    "knots are not nondecreasing: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        let (x0, y0) = knots[0];
        let (x1, y1) = knots[knots.len() - 1];
        let scale_x = 1.0 + x_period.abs() + x0.abs();
        let scale_y = 1.0 + y_period.abs() + y0.abs();
        if ((x1 - x0) - x_period).abs() > 1e-9 * scale_x
            || ((y1 - y0) - y_period).abs() > 1e-9 * scale_y
        {
            return Err(Error::InvalidArgument(format!(
                "knots span ({}, {}) but periods are ({x_period}, {y_period})",
                x1 - x0,
                y1 - y0
            )));
        }
        let mut knots = knots;
        let last = knots.len() - 1;
        knots[last] = (x0 + x_period, y0 + y_period);
        Ok(Self { knots, x_period, y_period })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn x_period(&self) -> f64 {
        self.x_period
    }

    pub fn y_period(&self) -> f64 {
        self.y_period
    }

    /// Start of the stored period.
    pub fn x_start(&self) -> f64 {
        self.knots[0].0
    }

    /// Evaluates the lift at any real `x`.
    pub fn eval(&self, x: f64, side: Side) -> f64 {
        let x0 = self.x_start();
        let k = ((x - x0) / self.x_period).floor();
        let mut xr = x - k * self.x_period;
        let mut shift = k * self.y_period;
        // Rounding can push xr onto the far end of the period.
        if xr >= x0 + self.x_period {
            xr -= self.x_period;
            shift += self.y_period;
        }
        if xr < x0 {
            xr = x0;
        }
        if xr == x0 && side == Side::Left {
            return self.eval_in_period(x0 + self.x_period, Side::Left) - self.y_period + shift;
        }
        self.eval_in_period(xr, side) + shift
    }

    fn eval_in_period(&self, x: f64, side: Side) -> f64 {
        let k = &self.knots;
        match side {
            Side::Left => {
                let i = k.partition_point(|p| p.0 < x);
                if i >= k.len() {
                    return k[k.len() - 1].1;
                }
                if k[i].0 == x || i == 0 {
                    return k[i].1;
                }
                interpolate(k[i - 1], k[i], x)
            }
            Side::Right => {
                let i = k.partition_point(|p| p.0 <= x);
                if i == 0 {
                    return k[0].1;
                }
                let i = i - 1;
                if k[i].0 == x || i + 1 >= k.len() {
                    return k[i].1;
                }
                interpolate(k[i], k[i + 1], x)
            }
        }
    }

    /// Generalized inverse obtained by swapping knot coordinates.
    ///
    /// Evaluated with [`Side::Right`] it returns `inf { s : F(s) > t }`.
    pub fn inverse(&self) -> Result<Self> {
        if self.y_period <= 0.0 {
            return Err(Error::InvalidArgument("cannot invert a lift with zero increment".into()));
        }
        let knots = self.knots.iter().map(|&(x, y)| (y, x)).collect();
        Self::new(knots, self.y_period, self.x_period)
    }

    /// True when there are no jumps and no plateaus.
    pub fn is_strictly_increasing(&self) -> bool {
        self.knots.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 > w[0].1)
    }

    /// Largest jump (vertical segment) within one period.
    pub fn max_jump(&self) -> f64 {
        self.knots
            .windows(2)
            .filter(|w| w[1].0 == w[0].0)
            .map(|w| w[1].1 - w[0].1)
            .fold(0.0, f64::max)
    }

    /// Slopes of the non-vertical pieces.
    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.knots
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
    }
}

fn interpolate(a: (f64, f64), b: (f64, f64), x: f64) -> f64 {
    let w = (x - a.0) / (b.0 - a.0);
    a.1 + w * (b.1 - a.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn staircase() -> MonotoneLift {
        // Jump of 1 at x = 1 and a plateau on [2, 3].
        MonotoneLift::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 2.0), (4.0, 3.0)], 4.0, 3.0)
            .unwrap()
    }

    #[test]
    fn one_sided_values_at_jump() {
        let f = staircase();
        assert_eq!(f.eval(1.0, Side::Left), 0.0);
        assert_eq!(f.eval(1.0, Side::Right), 1.0);
        assert!((f.eval(1.5, Side::Left) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn periodic_increment() {
        let f = staircase();
        for &x in &[0.3, 1.7, 2.5, 3.9] {
            let d = f.eval(x + 4.0, Side::Left) - f.eval(x, Side::Left);
            assert!((d - 3.0).abs() < 1e-12);
            let d = f.eval(x - 8.0, Side::Right) - f.eval(x, Side::Right);
            assert!((d + 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_turns_plateau_into_jump() {
        let q = staircase().inverse().unwrap();
        // inf { s : F(s) > 2 } = 3
        assert_eq!(q.eval(2.0, Side::Right), 3.0);
        // the jump of F becomes a plateau of the inverse
        assert_eq!(q.eval(0.5, Side::Right), 1.0);
    }

    #[test]
    fn rejects_decreasing_knots() {
        assert!(MonotoneLift::new(vec![(0.0, 1.0), (1.0, 0.5), (2.0, 2.0)], 2.0, 1.0).is_err());
    }
}
