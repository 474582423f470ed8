//! Named parameter storage partitioned by network component.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

/// The disjoint network components that own parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Component {
    ContentA,
    ContentB,
    ResProj,
    ResProjA,
    ResProjB,
    StyleA,
    StyleB,
    MapA,
    MapB,
    GenA,
    GenB,
    DiscA,
    DiscB,
}

impl Component {
    pub const ALL: [Component; 13] = [
        Component::ContentA,
        Component::ContentB,
        Component::ResProj,
        Component::ResProjA,
        Component::ResProjB,
        Component::StyleA,
        Component::StyleB,
        Component::MapA,
        Component::MapB,
        Component::GenA,
        Component::GenB,
        Component::DiscA,
        Component::DiscB,
    ];

    /// Prefix used in parameter names.
    pub fn prefix(self) -> &'static str {
        match self {
            Component::ContentA => "content_a",
            Component::ContentB => "content_b",
            Component::ResProj => "res_proj",
            Component::ResProjA => "res_proj_a",
            Component::ResProjB => "res_proj_b",
            Component::StyleA => "style_a",
            Component::StyleB => "style_b",
            Component::MapA => "map_a",
            Component::MapB => "map_b",
            Component::GenA => "gen_a",
            Component::GenB => "gen_b",
            Component::DiscA => "disc_a",
            Component::DiscB => "disc_b",
        }
    }

    pub fn is_discriminator(self) -> bool {
        matches!(self, Component::DiscA | Component::DiscB)
    }

    fn bit(self) -> u32 {
        1 << (self as u32)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

/// A set of components, used to decide which parameters receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ComponentSet(u32);

impl ComponentSet {
    pub fn all() -> Self {
        Component::ALL.iter().copied().collect()
    }

    pub fn discriminators() -> Self {
        [Component::DiscA, Component::DiscB].into_iter().collect()
    }

    /// Everything except the discriminators.
    pub fn generators() -> Self {
        Component::ALL
            .iter()
            .copied()
            .filter(|c| !c.is_discriminator())
            .collect()
    }

    pub fn contains(self, c: Component) -> bool {
        self.0 & c.bit() != 0
    }
}

impl FromIterator<Component> for ComponentSet {
    fn from_iter<I: IntoIterator<Item = Component>>(iter: I) -> Self {
        ComponentSet(iter.into_iter().fold(0, |acc, c| acc | c.bit()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub component: Component,
    pub tensor: Tensor,
}

/// All parameters of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter named `component.layer.index.kind`.
    pub fn add(
        &mut self,
        component: Component,
        layer: &str,
        index: usize,
        kind: &str,
        tensor: Tensor,
    ) -> ParamId {
        let name = format!("{}.{layer}.{index}.{kind}", component.prefix());
        debug_assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter {name}"
        );
        self.params.push(Param {
            name,
            component,
            tensor,
        });
        ParamId(self.params.len() - 1)
    }

    /// Gaussian(0, std) weights.
    pub fn add_gaussian<R: Rng>(
        &mut self,
        rng: &mut R,
        component: Component,
        layer: &str,
        index: usize,
        kind: &str,
        shape: &[usize],
        std: f32,
    ) -> ParamId {
        let normal = Normal::new(0.0f32, std).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("consistent shape");
        self.add(component, layer, index, kind, t)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn numel_of(&self, component: Component) -> usize {
        self.params
            .iter()
            .filter(|p| p.component == component)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn components(&self) -> Vec<Component> {
        let mut cs: Vec<Component> = self.params.iter().map(|p| p.component).collect();
        cs.sort();
        cs.dedup();
        cs
    }
}
