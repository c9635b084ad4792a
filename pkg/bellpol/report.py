"""
Report envelope for consistent JSON output across all subcommands.

Provides standardized success and error formats. Metadata carries the package
version and the file schema; there are no timestamps, so reruns with the same
RunConfig produce byte-identical files.
"""

from typing import Any, Dict, Optional

import numpy as np

from . import __version__


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays (recursively) into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


class Report:
    """
    Standardized report wrapper.

    All reports follow this structure:
    {
        "success": true/false,
        "message": "...",        # Present on success
        "data": {...},           # Present on success
        "error": {...},          # Present on failure
        "metadata": {
            "version": "x.y.z",
            "schema": "bellpol.<kind>/<n>"
        }
    }
    """

    @staticmethod
    def success(
        data: Any = None,
        message: str = "Success",
        schema: Optional[str] = None,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """
        Create a successful report.

        Args:
            data: Report payload
            message: Success message
            schema: Versioned schema string of the payload
            metadata: Additional metadata

        Returns:
            Dict in the standardized success format
        """
        base_metadata = {"version": __version__}
        if schema is not None:
            base_metadata["schema"] = schema
        if metadata:
            base_metadata.update(metadata)

        return {
            "success": True,
            "message": message,
            "data": to_jsonable(data),
            "metadata": base_metadata,
        }

    @staticmethod
    def error(
        message: str,
        error_code: Optional[str] = None,
        details: Any = None,
        exit_code: int = 2,
        metadata: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """
        Create an error report.

        Args:
            message: Error message
            error_code: Application-specific error code
            details: Additional error details
            exit_code: Process exit code the error maps to
            metadata: Additional metadata

        Returns:
            Dict in the standardized error format
        """
        return {
            "success": False,
            "error": {
                "message": message,
                "code": error_code or f"ERR_{exit_code}",
                "details": to_jsonable(details),
            },
            "metadata": {
                "version": __version__,
                **(metadata or {}),
            },
        }

    @staticmethod
    def from_exception(exc) -> Dict[str, Any]:
        """Shorthand for a BellPolError."""
        return Report.error(
            message=exc.message,
            error_code=exc.error_code,
            details=exc.details,
            exit_code=exc.exit_code,
        )


def wrap_report(data: Any, message: str = "Success", schema: Optional[str] = None) -> Dict[str, Any]:
    """
    Simple dict wrapper for command results.

    Usage:
        return wrap_report({"p2": 0.2966}, "DP computed", schema="bellpol.dp/1")
    """
    return Report.success(data, message, schema)
