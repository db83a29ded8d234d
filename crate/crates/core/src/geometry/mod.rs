//! Interval partitions, triangular meshes, and reference-element maps.

mod affine;
mod delaunay;
mod interval;
mod mesh_io;
mod triangle_mesh;

pub use affine::AffineMap;
pub use delaunay::{
    polygon_area, regular_pentagon, triangulate_polygon, validate_polygon, Delaunay, MAX_AREA_FACTOR,
    MEAN_AREA_FACTOR, MIN_ANGLE_DEGREES,
};
pub use interval::{Interface1D, Mesh1D};
pub use mesh_io::{read_mesh, write_mesh, MeshSummary, MESH_HEADER};
pub use triangle_mesh::{BoundaryKind, Edge, EdgeKind, Mesh2D};

pub type Point2 = [f64; 2];
