//! In-memory project registry with per-project compare-and-set writes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use metaforge_core::model::{self, Document, Project, ProjectError, PROJECT_EXTENSION};

use crate::error::ApiError;

struct Slot {
    project: RwLock<Project>,
    /// Write-through target, if the project is backed by a file.
    path: Option<PathBuf>,
}

#[derive(Default)]
pub struct Store {
    slots: RwLock<BTreeMap<String, Arc<Slot>>>,
    data_dir: Option<PathBuf>,
}

/// Project id for a file: its name without the project extension.
pub fn project_id_for(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("project");
    name.strip_suffix(PROJECT_EXTENSION)
        .or_else(|| name.strip_suffix(".json"))
        .unwrap_or(name)
        .to_string()
}

impl Store {
    /// New projects are persisted under `data_dir` when one is given.
    pub fn new(data_dir: Option<PathBuf>) -> Self {
        Self { slots: RwLock::default(), data_dir }
    }

    pub fn open(&self, path: &Path) -> Result<String, ProjectError> {
        let project = model::load_project(path)?;
        let id = project_id_for(path);
        self.insert(&id, project, Some(path.to_path_buf()));
        Ok(id)
    }

    fn insert(&self, id: &str, project: Project, path: Option<PathBuf>) {
        let slot = Arc::new(Slot { project: RwLock::new(project), path });
        self.slots.write().expect("store lock").insert(id.to_string(), slot);
    }

    pub fn create(&self, project: Project) -> Result<String, ApiError> {
        let mut slots = self.slots.write().expect("store lock");
        let id = (1..).map(|n| format!("p{n}")).find(|id| !slots.contains_key(id)).expect("unbounded");
        let path = self.data_dir.as_ref().map(|d| d.join(format!("{id}{PROJECT_EXTENSION}")));
        if let Some(path) = &path {
            model::save_project(&project, path)?;
        }
        slots.insert(id.clone(), Arc::new(Slot { project: RwLock::new(project), path }));
        Ok(id)
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        self.slots
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("project", id))
    }

    pub fn read<T>(&self, id: &str, f: impl FnOnce(&Project) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let slot = self.slot(id)?;
        let project = slot.project.read().expect("project lock");
        f(&project)
    }

    /// Apply `f` to a copy of the project if it is still at `expected`, then
    /// publish and persist the copy. Failed mutations leave no trace.
    pub fn mutate<T>(
        &self,
        id: &str,
        expected: u64,
        f: impl FnOnce(&mut Project) -> Result<T, ApiError>,
    ) -> Result<(T, u64), ApiError> {
        let slot = self.slot(id)?;
        let mut guard = slot.project.write().expect("project lock");
        guard.expect_revision(expected)?;
        let mut next = guard.clone();
        let out = f(&mut next)?;
        if let Some(path) = &slot.path {
            model::save_project(&next, path)?;
        }
        let revision = next.revision;
        *guard = next;
        Ok((out, revision))
    }

    /// The project holding a document. Ids are only unique per project, so a
    /// document id present in two projects is reported as a conflict.
    pub fn project_of_document(&self, document_id: &str) -> Result<String, ApiError> {
        let slots = self.slots.read().expect("store lock");
        let owners: Vec<&String> = slots
            .iter()
            .filter(|(_, s)| s.project.read().expect("project lock").document(document_id).is_some())
            .map(|(id, _)| id)
            .collect();
        match owners.as_slice() {
            [] => Err(ApiError::not_found("document", document_id)),
            [one] => Ok((*one).clone()),
            _ => Err(ApiError::conflict(format!("document id {document_id} exists in several projects"))),
        }
    }

    pub fn document(&self, project_id: &str, document_id: &str) -> Result<Document, ApiError> {
        self.read(project_id, |p| {
            p.document(document_id).cloned().ok_or_else(|| ApiError::not_found("document", document_id))
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.slots.read().expect("store lock").keys().cloned().collect()
    }
}
