use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParameterStore;
use super::tape::{Graph, Var};
use super::NumError;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Largest `|a - n| / max(|a|, |n|)` over entries whose absolute error
    /// exceeds `abs_tol`.
    pub max_rel: f64,
    pub max_abs: f64,
    pub abs_tol: f64,
}

impl GradCheck {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel < rel_tol
    }
}

/// Checks `samples` randomly chosen parameter entries (all of them if there
/// are fewer) with central differences of step `h`. `loss` must build a
/// deterministic scalar from the store.
pub fn check_gradients<F>(store: &mut ParameterStore, loss: F, samples: usize, h: f64, abs_tol: f64, seed: u64) -> Result<GradCheck, NumError>
where
    F: Fn(&mut Graph, &ParameterStore) -> Result<Var, NumError>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let l = loss(&mut g, store)?;
    g.backward(l).accumulate_into(store);

    let mut flat = Vec::with_capacity(store.num_scalars());
    for id in store.ids() {
        for k in 0..store.value(id).len() {
            flat.push((id, k));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, flat.len(), samples.min(flat.len())).into_vec();

    let eval = |store: &ParameterStore| -> Result<f64, NumError> {
        let mut g = Graph::new();
        let l = loss(&mut g, store)?;
        Ok(g.scalar(l))
    };
    let mut out = GradCheck { checked: 0, max_rel: 0.0, max_abs: 0.0, abs_tol };
    for p in picks {
        let (id, k) = flat[p];
        let analytic = store.grad(id).as_slice().expect("standard layout")[k];
        let orig = store.value(id).as_slice().unwrap()[k];
        store.value_mut(id).as_slice_mut().unwrap()[k] = orig + h;
        let up = eval(store)?;
        store.value_mut(id).as_slice_mut().unwrap()[k] = orig - h;
        let down = eval(store)?;
        store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let abs = (analytic - numeric).abs();
        out.max_abs = out.max_abs.max(abs);
        if abs > abs_tol {
            out.max_rel = out.max_rel.max(abs / analytic.abs().max(numeric.abs()));
        }
        out.checked += 1;
    }
    Ok(out)
}
