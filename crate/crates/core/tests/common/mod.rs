#![allow(dead_code)]

use kernlab::rng::rand_uniform;
use kernlab::{Element, Rng, Tensor};

pub fn f64s<T: Element>(t: &Tensor<T>) -> Vec<f64> {
    t.as_slice().iter().map(|v| v.to_f64().unwrap()).collect()
}

pub fn uniform(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f64> {
    rand_uniform(rng, shape, -1.0, 1.0).unwrap()
}

pub fn pick(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.range_inclusive(lo as u64, hi as u64) as usize
}
