//! Order-preserving fan-out over scoped worker threads.

/// Runs `f` over `items` in contiguous chunks, one thread per entry of
/// `states`, and returns results in input order.
pub(crate) fn parallel_map<T: Sync, S: Send, R: Send>(
    items: &[T],
    states: &mut [S],
    f: impl Fn(&T, &mut S) -> R + Sync,
) -> Vec<R> {
    let workers = states.len().max(1).min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(|x| f(x, &mut states[0])).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .zip(states.iter_mut())
            .map(|(part, state)| {
                let f = &f;
                s.spawn(move || part.iter().map(|x| f(x, state)).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker thread panicked"))
            .collect()
    })
}
