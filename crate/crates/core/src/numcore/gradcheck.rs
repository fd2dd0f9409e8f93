//! Central finite differences as an independent gradient oracle.

use alloc::collections::BTreeMap;
use alloc::string::String;

use super::{ParamSet, Tensor};
use crate::math::abs;

/// Fourth-order central-difference gradient of `f` at `params`,
/// coordinate by coordinate: `(-f(2h) + 8f(h) - 8f(-h) + f(-2h)) / 12h`.
pub fn finite_difference<F: FnMut(&ParamSet) -> f64>(mut f: F, params: &ParamSet, h: f64) -> BTreeMap<String, Tensor> {
    let mut work = params.clone();
    let mut out = BTreeMap::new();
    let names: alloc::vec::Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name).unwrap().len();
        let mut g = Tensor::zeros(params.get(&name).unwrap().shape());
        for i in 0..len {
            let orig = work.get(&name).unwrap().data()[i];
            let mut at = |x: f64| {
                work.get_mut(&name).unwrap().data_mut()[i] = x;
                f(&work)
            };
            let (p2, p1, m1, m2) = (at(orig + 2.0 * h), at(orig + h), at(orig - h), at(orig - 2.0 * h));
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            g.data_mut()[i] = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        }
        out.insert(name, g);
    }
    out
}

/// Worst coordinate mismatch between two gradients. Coordinates where both
/// magnitudes are below `floor` are compared absolutely against `floor`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub worst_relative: f64,
    pub worst_name: String,
    pub worst_index: usize,
    pub coordinates: usize,
}

pub fn compare(analytic: &BTreeMap<String, Tensor>, numeric: &BTreeMap<String, Tensor>, floor: f64) -> GradReport {
    let mut rep = GradReport { worst_relative: 0.0, worst_name: String::new(), worst_index: 0, coordinates: 0 };
    for (name, a) in analytic {
        let n = &numeric[name];
        for (i, (x, y)) in a.data().iter().zip(n.data()).enumerate() {
            let scale = abs(*x).max(abs(*y)).max(floor);
            let rel = abs(x - y) / scale;
            rep.coordinates += 1;
            if rel > rep.worst_relative || rel.is_nan() {
                rep.worst_relative = if rel.is_nan() { f64::INFINITY } else { rel };
                rep.worst_name = name.clone();
                rep.worst_index = i;
            }
        }
    }
    rep
}
