use alloc::format;

use crate::numerics::{LoraAdapter, ParamStore, Tensor};
use crate::rng::{normal, stream};
use crate::{Error, Result};

/// Adds a rank-`r` adapter to every target weight and freezes everything
/// else. `down` starts small and random, `up` starts at zero, so the
/// adapted model initially computes exactly what the base model did.
pub fn lora_attach(store: &mut ParamStore, targets: &[&str], r: usize, alpha: f64, seed: u64) -> Result<()> {
    if r == 0 {
        return Err(Error::Config("LoRA rank must be >= 1".into()));
    }
    if targets.is_empty() {
        return Err(Error::Config("LoRA needs at least one target".into()));
    }
    for &t in targets {
        store.id(t)?;
        if store.adapter(t).is_some() {
            return Err(Error::Config(format!("`{t}` already has an adapter")));
        }
    }
    for name in store.names() {
        store.set_trainable(&name, false)?;
    }
    let mut rng = stream(seed, "lora-init");
    for &t in targets {
        let w = store.by_name(t)?.value.clone();
        let (d_in, d_out) = (w.rows(), w.cols());
        let std = 0.01 / libm::sqrt(d_in as f64);
        let down_data = (0..r * d_in).map(|_| std * normal(&mut rng)).collect();
        let adapter = LoraAdapter {
            target: t.into(),
            rank: r,
            alpha,
            down: format!("{t}.lora_down"),
            up: format!("{t}.lora_up"),
        };
        store.insert(&adapter.down, Tensor::from_rows(r, d_in, down_data)?, true)?;
        store.insert(&adapter.up, Tensor::zeros(d_out, r), true)?;
        store.insert_adapter(adapter);
    }
    Ok(())
}

/// Folds every adapter into its base weight (`W += (α/r)·(B·A)ᵀ` in the
/// `x·W` convention), removes the adapters and unfreezes all weights.
pub fn lora_merge(store: &mut ParamStore) -> Result<()> {
    let adapters: alloc::vec::Vec<LoraAdapter> = store.adapters().cloned().collect();
    for a in adapters {
        let down = store.remove(&a.down)?.value;
        let up = store.remove(&a.up)?.value;
        let delta = up.matmul(&down)?.transpose()?.scale(a.scaling());
        let id = store.id(&a.target)?;
        store.get_mut(id).value.add_assign(&delta)?;
        store.remove_adapter(&a.target);
    }
    for name in store.names() {
        store.set_trainable(&name, true)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_rank_one_has_eight_trainable() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::identity(4), true).unwrap();
        s.insert("other", Tensor::zeros(2, 2), true).unwrap();
        lora_attach(&mut s, &["w"], 1, 1.0, 0).unwrap();
        assert_eq!(s.count(true), 8);
        assert_eq!(s.count(false), 16 + 4 + 8);
        assert!(lora_attach(&mut s, &["w"], 1, 1.0, 0).is_err());
        assert!(lora_attach(&mut s, &["nope"], 1, 1.0, 0).is_err());
    }

    #[test]
    fn merge_folds_delta() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::zeros(3, 2), true).unwrap();
        lora_attach(&mut s, &["w"], 1, 2.0, 0).unwrap();
        let down = Tensor::from_rows(1, 3, alloc::vec![1.0, 2.0, 3.0]).unwrap();
        let up = Tensor::from_rows(2, 1, alloc::vec![1.0, -1.0]).unwrap();
        let did = s.id("w.lora_down").unwrap();
        s.get_mut(did).value = down;
        let uid = s.id("w.lora_up").unwrap();
        s.get_mut(uid).value = up;
        lora_merge(&mut s).unwrap();
        assert_eq!(s.by_name("w").unwrap().value.data(), &[2.0, -2.0, 4.0, -4.0, 6.0, -6.0]);
        assert_eq!(s.adapters().count(), 0);
        assert_eq!(s.count(true), 6);
    }
}
