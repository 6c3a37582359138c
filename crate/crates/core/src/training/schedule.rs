/// Initial learning rate.
pub const LR0: f64 = 5e-4;
/// Multiplicative decay applied every [`LR_DECAY_EVERY`] epochs.
pub const LR_DECAY: f64 = 0.98;
pub const LR_DECAY_EVERY: usize = 10;

/// Step-decayed learning rate for a zero-based epoch.
pub fn lr_at(epoch: usize) -> f64 {
    lr_with(LR0, LR_DECAY, LR_DECAY_EVERY, epoch)
}

pub fn lr_with(lr0: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    lr0 * decay.powf((epoch / every.max(1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_every_ten_epochs() {
        assert_eq!(lr_at(0), 5e-4);
        assert_eq!(lr_at(9), 5e-4);
        assert!((lr_at(20) - 4.802e-4).abs() < 1e-15);
        assert!(lr_at(10) < lr_at(9));
    }
}
