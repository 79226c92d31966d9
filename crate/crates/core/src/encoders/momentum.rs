use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// `momentum ← m·momentum + (1−m)·online` for every parameter, matched by name.
pub fn momentum_update(online: &ParamStore, momentum: &mut ParamStore, m: f64) -> Result<()> {
    if !(0.0..1.0).contains(&m) {
        return Err(Error::contract(format!("momentum coefficient {m} outside [0, 1)")));
    }
    if online.names() != momentum.names() {
        return Err(Error::contract("online and momentum parameter lists are not aligned"));
    }
    for id in online.ids() {
        let src = online.value(id);
        let dst = momentum.value_mut(id);
        if src.shape() != dst.shape() {
            return Err(Error::contract(format!("shape mismatch for parameter {}", online.name(id))));
        }
        for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
            *d = m * *d + (1.0 - m) * s;
        }
    }
    Ok(())
}
