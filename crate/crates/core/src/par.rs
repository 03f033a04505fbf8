//! Iterator shims: rayon when the `parallel` feature is enabled, plain
//! sequential iterators otherwise. Call sites use only the combinator
//! subset the two worlds share (`map`, `flat_map`, `collect`), so the
//! results are identical either way.

#[cfg(feature = "parallel")]
pub use rayon::iter::{IndexedParallelIterator, ParallelIterator};

#[cfg(feature = "parallel")]
pub trait MaybeParallelExt: rayon::iter::IntoParallelIterator {
    fn maybe_into_par_iter(self) -> Self::Iter
    where
        Self: Sized,
    {
        self.into_par_iter()
    }
}

#[cfg(feature = "parallel")]
impl<T: rayon::iter::IntoParallelIterator> MaybeParallelExt for T {}

#[cfg(feature = "parallel")]
pub trait MaybeParallelRefExt {
    type Item: Sync;
    fn maybe_par_iter(&self) -> rayon::slice::Iter<'_, Self::Item>;
}

#[cfg(feature = "parallel")]
impl<T: Sync> MaybeParallelRefExt for [T] {
    type Item = T;
    fn maybe_par_iter(&self) -> rayon::slice::Iter<'_, T> {
        use rayon::iter::IntoParallelRefIterator;
        self.par_iter()
    }
}

#[cfg(feature = "parallel")]
impl<T: Sync> MaybeParallelRefExt for Vec<T> {
    type Item = T;
    fn maybe_par_iter(&self) -> rayon::slice::Iter<'_, T> {
        use rayon::iter::IntoParallelRefIterator;
        self.as_slice().par_iter()
    }
}

#[cfg(not(feature = "parallel"))]
pub trait MaybeParallelExt: IntoIterator {
    fn maybe_into_par_iter(self) -> Self::IntoIter
    where
        Self: Sized,
    {
        self.into_iter()
    }
}

#[cfg(not(feature = "parallel"))]
impl<T: IntoIterator> MaybeParallelExt for T {}

#[cfg(not(feature = "parallel"))]
pub trait MaybeParallelRefExt {
    type Item;
    fn maybe_par_iter(&self) -> std::slice::Iter<'_, Self::Item>;
}

#[cfg(not(feature = "parallel"))]
impl<T> MaybeParallelRefExt for [T] {
    type Item = T;
    fn maybe_par_iter(&self) -> std::slice::Iter<'_, T> {
        self.iter()
    }
}

#[cfg(not(feature = "parallel"))]
impl<T> MaybeParallelRefExt for Vec<T> {
    type Item = T;
    fn maybe_par_iter(&self) -> std::slice::Iter<'_, T> {
        self.iter()
    }
}
