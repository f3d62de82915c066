fn main() {
    // Cap the worker pool before any parallel region builds the global one.
    // Results never depend on this: every path owns a seeded RNG stream and
    // reductions are order-fixed.
    if let Ok(value) = std::env::var("AVGRAPH_THREADS") {
        if let Ok(threads) = value.parse::<usize>() {
            if threads > 0 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build_global();
            }
        }
    }
    std::process::exit(avgraph::cli::run());
}
