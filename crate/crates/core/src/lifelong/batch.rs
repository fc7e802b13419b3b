use crate::error::{LpsError, Result};
use crate::synthgen::SceneSample;

/// Where a batch scene came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    New,
    /// Exemplar of an old domain: position of that domain in the store and
    /// index of the exemplar within it.
    Exemplar { domain: usize, index: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub scene: &'a SceneSample,
    pub origin: Origin,
    pub flip: bool,
}

impl BatchItem<'_> {
    pub fn is_exemplar(&self) -> bool {
        matches!(self.origin, Origin::Exemplar { .. })
    }

    /// The scene as fed to the network.
    pub fn materialize(&self) -> std::borrow::Cow<'_, SceneSample> {
        if self.flip {
            std::borrow::Cow::Owned(self.scene.hflip())
        } else {
            std::borrow::Cow::Borrowed(self.scene)
        }
    }
}

/// Endless in-order cycle over one domain's exemplars.
#[derive(Debug, Clone)]
pub struct ExemplarCycler<'a> {
    pub domain: usize,
    scenes: &'a [SceneSample],
    next: usize,
    served: Vec<usize>,
}

impl<'a> ExemplarCycler<'a> {
    pub fn new(domain: usize, scenes: &'a [SceneSample]) -> Self {
        Self {
            domain,
            scenes,
            next: 0,
            served: vec![0; scenes.len()],
        }
    }

    /// How often each exemplar has been handed out.
    pub fn served(&self) -> &[usize] {
        &self.served
    }
}

impl<'a> Iterator for ExemplarCycler<'a> {
    type Item = (usize, &'a SceneSample);

    fn next(&mut self) -> Option<Self::Item> {
        if self.scenes.is_empty() {
            return None;
        }
        let i = self.next;
        self.next = (self.next + 1) % self.scenes.len();
        self.served[i] += 1;
        Some((i, &self.scenes[i]))
    }
}

/// Exactly `batch_new` new-domain scenes followed by `batch_old_per_domain`
/// exemplars from each old domain.
pub fn compose_batch<'a>(
    new_iter: &mut impl Iterator<Item = &'a SceneSample>,
    exemplar_iters: &mut [ExemplarCycler<'a>],
    batch_new: usize,
    batch_old_per_domain: usize,
) -> Result<Vec<BatchItem<'a>>> {
    let mut batch = Vec::with_capacity(batch_new + batch_old_per_domain * exemplar_iters.len());
    for _ in 0..batch_new {
        let scene = new_iter
            .next()
            .ok_or_else(|| LpsError::Empty("new-domain iterator ran dry inside a batch".into()))?;
        batch.push(BatchItem {
            scene,
            origin: Origin::New,
            flip: false,
        });
    }
    for cycler in exemplar_iters.iter_mut() {
        for _ in 0..batch_old_per_domain {
            let (index, scene) = cycler
                .next()
                .ok_or_else(|| LpsError::Empty(format!("old domain {} has no exemplars", cycler.domain)))?;
            batch.push(BatchItem {
                scene,
                origin: Origin::Exemplar {
                    domain: cycler.domain,
                    index,
                },
                flip: false,
            });
        }
    }
    Ok(batch)
}
