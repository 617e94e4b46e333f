//! JSON model description: links, named contact points and actuation mask.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContactDim, ContactPoint, KinematicTree, Link, ModelError, Placement};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementSpec {
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub translation: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    /// Parent link name; omitted for the floating base.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementSpec>,
    pub mass: f64,
    #[serde(default)]
    pub com: [f64; 2],
    pub inertia: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub link: String,
    pub offset: [f64; 2],
    #[serde(default = "both_dims")]
    pub dims: Vec<ContactDim>,
}

fn both_dims() -> Vec<ContactDim> {
    vec![ContactDim::Tangential, ContactDim::Normal]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DescriptionFile {
    links: Vec<LinkSpec>,
    #[serde(default)]
    contacts: BTreeMap<String, ContactSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    actuated: Option<Vec<bool>>,
}

/// A validated model plus its contact-point dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescription {
    pub tree: KinematicTree,
    pub contacts: BTreeMap<String, ContactPoint>,
}

impl ModelDescription {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let file: DescriptionFile = serde_json::from_str(text).map_err(|e| {
            ModelError::Description(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        Self::from_file(file)
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<Self, ModelError> {
        let file: DescriptionFile =
            serde_json::from_value(value).map_err(|e| ModelError::Description(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Description(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    fn from_file(file: DescriptionFile) -> Result<Self, ModelError> {
        let mut names: Vec<&str> = Vec::new();
        let mut links = Vec::with_capacity(file.links.len());
        for (index, entry) in file.links.iter().enumerate() {
            if names.contains(&entry.name.as_str()) {
                return Err(ModelError::Description(format!(
                    "duplicate link name {:?}",
                    entry.name
                )));
            }
            let parent = match &entry.parent {
                None => None,
                Some(p) => Some(names.iter().position(|n| n == p).ok_or_else(|| {
                    ModelError::InvalidLink {
                        index,
                        name: entry.name.clone(),
                        reason: format!("parent {p:?} must be declared before the link"),
                    }
                })?),
            };
            let placement = entry.placement.clone().map_or(Placement::default(), |p| Placement {
                angle: p.angle,
                translation: p.translation,
            });
            let mut link = Link::new(entry.name.clone(), entry.mass, entry.com, entry.inertia);
            link.parent = parent;
            link.joint_placement = placement;
            links.push(link);
            names.push(&entry.name);
        }
        let tree = match file.actuated {
            Some(mask) => KinematicTree::with_actuation(links, mask)?,
            None => KinematicTree::new(links)?,
        };
        let mut contacts = BTreeMap::new();
        for (name, entry) in file.contacts {
            let link = tree.link_index(&entry.link).ok_or_else(|| {
                ModelError::Description(format!("contact {name:?}: unknown link {:?}", entry.link))
            })?;
            let contact = ContactPoint {
                link,
                offset: entry.offset,
                tangential: entry.dims.contains(&ContactDim::Tangential),
                normal: entry.dims.contains(&ContactDim::Normal),
            };
            tree.validate_contact(&contact)?;
            contacts.insert(name, contact);
        }
        Ok(Self { tree, contacts })
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let links = self.tree.links();
        let file = DescriptionFile {
            links: links
                .iter()
                .map(|l| LinkSpec {
                    name: l.name.clone(),
                    parent: l.parent.map(|p| links[p].name.clone()),
                    placement: l.parent.map(|_| PlacementSpec {
                        angle: l.joint_placement.angle,
                        translation: l.joint_placement.translation,
                    }),
                    mass: l.mass,
                    com: l.com_offset,
                    inertia: l.inertia,
                })
                .collect(),
            contacts: self
                .contacts
                .iter()
                .map(|(name, c)| {
                    let mut dims = Vec::new();
                    if c.tangential {
                        dims.push(ContactDim::Tangential);
                    }
                    if c.normal {
                        dims.push(ContactDim::Normal);
                    }
                    (
                        name.clone(),
                        ContactSpec {
                            link: links[c.link].name.clone(),
                            offset: c.offset,
                            dims,
                        },
                    )
                })
                .collect(),
            actuated: None,
        };
        serde_json::to_value(file).expect("description serializes")
    }

    pub fn contact(&self, name: &str) -> Result<ContactPoint, ModelError> {
        self.contacts
            .get(name)
            .cloned()
            .ok_or_else(|| ModelError::Description(format!("unknown contact {name:?}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"{
        "links": [
            {"name": "base", "mass": 2.0, "inertia": 0.1},
            {"name": "leg", "parent": "base", "placement": {"translation": [0.0, -0.1]},
             "mass": 1.0, "com": [0.0, -0.2], "inertia": 0.01}
        ],
        "contacts": {"foot": {"link": "leg", "offset": [0.0, -0.4]}}
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let model = ModelDescription::from_json_str(SAMPLE).unwrap();
        assert_eq!(model.tree.n_joints(), 1);
        assert_eq!(model.contact("foot").unwrap().dims(), 2);
        let again = ModelDescription::from_json_value(model.to_json_value()).unwrap();
        assert_eq!(again, model);
    }

    #[test]
    fn rejects_invalid_links_with_location() {
        let bad = SAMPLE.replace("\"mass\": 1.0", "\"mass\": -1.0");
        let err = ModelDescription::from_json_str(&bad).unwrap_err();
        assert!(matches!(err, ModelError::InvalidLink { index: 1, .. }), "{err}");
        let err = ModelDescription::from_json_str("{\"links\": [ {\"name\": 3} ]}").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let unknown = SAMPLE.replace("\"link\": \"leg\"", "\"link\": \"arm\"");
        assert!(ModelDescription::from_json_str(&unknown).is_err());
    }
}
