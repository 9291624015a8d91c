//! Thin indirection over rayon so the data-parallel loops fall back to
//! plain sequential iteration when the `parallel` feature is disabled.

#[cfg(feature = "parallel")]
pub fn for_each_mut<T: Send, F: Fn(usize, &mut T) + Sync>(items: &mut [T], f: F) {
    use rayon::prelude::*;
    items
        .par_iter_mut()
        .enumerate()
        .for_each(|(i, item)| f(i, item));
}

#[cfg(not(feature = "parallel"))]
pub fn for_each_mut<T, F: Fn(usize, &mut T)>(items: &mut [T], f: F) {
    for (i, item) in items.iter_mut().enumerate() {
        f(i, item);
    }
}

/// Maps `f` over the items, preserving order of the results.
#[cfg(feature = "parallel")]
pub fn map_collect<T: Sync, R: Send, F: Fn(&T) -> R + Sync>(items: &[T], f: F) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(|x| f(x)).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}
