//! Pipeline driver behind the `rmvs` binary: configuration, the scene
//! directory layout and one function per subcommand.

pub mod commands;
pub mod config;
pub mod scene_dir;

/// Runs `f` on a pool of `threads` workers (0 = every core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    Ok(pool.install(f))
}
