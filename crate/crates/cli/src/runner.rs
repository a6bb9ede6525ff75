//! Parallel generation runner for the tuner: members train on scoped
//! threads, bounded by `--jobs`. Per-member seeds make parallel and serial
//! histories identical.

use lrqa_core::hpo::{train_and_score, GenerationRunner, HpoError, Member, SerialRunner, Trainable};

pub struct ThreadRunner {
    pub jobs: usize,
}

impl<T: Trainable + Send> GenerationRunner<T> for ThreadRunner {
    fn run(&mut self, members: &mut [Member<T>], steps: usize) -> Result<(), HpoError> {
        if self.jobs <= 1 || members.len() <= 1 {
            return SerialRunner.run(members, steps);
        }
        let chunk_size = members.len().div_ceil(self.jobs);
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in members.chunks_mut(chunk_size) {
                handles.push(scope.spawn(move || -> Result<(), HpoError> {
                    for member in chunk {
                        train_and_score(member, steps)?;
                    }
                    Ok(())
                }));
            }
            for handle in handles {
                handle.join().map_err(|_| HpoError::Trainable {
                    member: usize::MAX,
                    message: "worker thread panicked".into(),
                })??;
            }
            Ok(())
        })
    }
}
