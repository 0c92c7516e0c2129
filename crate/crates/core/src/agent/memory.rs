use crate::corpus::ItemId;

/// Keeps the first and last `⌊size/2⌋` items of a history longer than
/// `size`; shorter histories are returned unchanged.
pub fn compress_memory(history: &[ItemId], size: usize) -> Vec<ItemId> {
    if history.len() <= size {
        return history.to_vec();
    }
    let half = size / 2;
    let mut out = Vec::with_capacity(2 * half);
    out.extend_from_slice(&history[..half]);
    out.extend_from_slice(&history[history.len() - half..]);
    out
}
