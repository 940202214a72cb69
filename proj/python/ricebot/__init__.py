"""Rice disease detection chatbot: evaluation metrics, dataset tooling,
detector backends, the logs database and the webhook gateway."""

from ._core import (
    Error,
    InvalidArgument,
    UnknownClass,
    ParseError,
    DecodeError,
    InsufficientData,
    UnknownJob,
    StorageError,
    known_classes,
    iou,
    atp_image_point,
    atp_report,
    evaluate,
    evaluate_files,
    audit_manifest,
    remove_class,
    merge_manifests,
    split_manifest,
    synth_image,
    detect,
    render_annotation,
    content_hash,
    compute_signature,
    verify_signature,
    parse_command,
    render_reply_text,
    Store,
    Gateway,
)

__version__ = "0.3.0"
