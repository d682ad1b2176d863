from mmdfr.geometry.align import (ALIGNED_SIZE, HOLISTIC_SHAPE, crop_holistic, default_template,
                                  fit_similarity, mirror_landmarks, similarity_align)
from mmdfr.geometry.camera import CameraFit, fit_camera, frontal_camera, project_points
from mmdfr.geometry.image import flip_horizontal, read_pgm, resize_bilinear, write_pgm
from mmdfr.geometry.mesh import GenericMesh, make_face_mesh, read_mesh, write_mesh
from mmdfr.geometry.modalities import GeometryConfig, ModalityBundle, build_modalities
from mmdfr.geometry.render import frontalize, rasterize, sample_patches

__all__ = [
    "ALIGNED_SIZE", "HOLISTIC_SHAPE", "CameraFit", "GenericMesh", "GeometryConfig",
    "ModalityBundle", "build_modalities", "crop_holistic", "default_template", "fit_camera",
    "fit_similarity", "flip_horizontal", "frontal_camera", "frontalize", "make_face_mesh",
    "mirror_landmarks", "project_points", "rasterize", "read_mesh", "read_pgm",
    "resize_bilinear", "sample_patches", "similarity_align", "write_mesh", "write_pgm",
]
