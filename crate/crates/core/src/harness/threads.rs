use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "MCHSR_THREADS";

/// Worker count from `MCHSR_THREADS`; unset or empty means one.
pub fn threads_from_env() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got \"{v}\""))),
        },
        _ => Ok(1),
    }
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// [`with_threads`] sized from the environment.
pub fn with_env_threads<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    with_threads(threads_from_env()?, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_has_requested_size() {
        assert_eq!(with_threads(3, rayon::current_num_threads).unwrap(), 3);
        assert_eq!(with_threads(0, rayon::current_num_threads).unwrap(), 1);
    }
}
