use super::Tensor2;

/// Named, ordered access to every learnable tensor of a module.
///
/// Gradients use the implementing type itself (a zeroed clone), so parameter
/// and gradient tensors always line up one-to-one in visiting order.
pub trait Parameters {
    fn collect_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor2)>);

    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor2)>);

    fn named_params(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor2)> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    fn zeroed(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut g = self.clone();
        for (_, t) in g.named_params_mut() {
            t.fill(0.0);
        }
        g
    }

    fn accumulate(&mut self, other: &Self)
    where
        Self: Sized,
    {
        let theirs = other.named_params();
        for ((_, mine), (_, t)) in self.named_params_mut().into_iter().zip(theirs) {
            mine.add_assign(t);
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
