"""Authoritative store of geo-anchored AR content.

Holds the project's virtual objects and fiducials, assigns stable ids,
tracks a monotonically increasing revision, notifies subscribers of
changes, and persists to a versioned JSON file.
"""

from __future__ import annotations

import json
import math
import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterator, Optional

from .geo import (
    FrameAnchor,
    GeoPosition,
    LocalPosition,
    Orientation,
    geo_to_local,
    local_to_geo,
    make_anchor,
)

FORMAT_VERSION = 1


class RegistryError(Exception):
    pass


class UnknownItemError(RegistryError):
    pass


class DuplicateItemError(RegistryError):
    pass


class ProjectFormatError(RegistryError):
    """Malformed or version-incompatible project file."""


class ContentKind(str, Enum):
    IMAGE_QUAD = "ImageQuad"
    VIDEO_QUAD = "VideoQuad"
    MESH = "Mesh"
    SPATIAL_AUDIO = "SpatialAudio"
    FIDUCIAL = "Fiducial"


@dataclass(frozen=True)
class ContentItem:
    id: str
    kind: ContentKind
    geo: GeoPosition
    orientation: Orientation = field(default_factory=Orientation.identity)
    scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    asset_ref: str = ""
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.scale) != 3 or any(
            not (math.isfinite(s) and s > 0) for s in self.scale
        ):
            raise RegistryError(f"scale must be three positive numbers: {self.scale!r}")
        object.__setattr__(self, "scale", tuple(float(s) for s in self.scale))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "lat": self.geo.latitude_deg,
            "lon": self.geo.longitude_deg,
            "height": self.geo.height_m,
            "orientation": list(self.orientation.as_tuple()),
            "scale": list(self.scale),
            "asset_ref": self.asset_ref,
            "metadata": dict(self.metadata),
        }

    @staticmethod
    def from_dict(d: dict[str, Any], strict: bool = False) -> "ContentItem":
        known = {
            "id",
            "kind",
            "lat",
            "lon",
            "height",
            "orientation",
            "scale",
            "asset_ref",
            "metadata",
        }
        extra = set(d) - known
        if extra and strict:
            raise ProjectFormatError(f"unknown item fields: {sorted(extra)}")
        try:
            return ContentItem(
                id=str(d["id"]),
                kind=ContentKind(d["kind"]),
                geo=GeoPosition(float(d["lat"]), float(d["lon"]), float(d.get("height", 0.0))),
                orientation=Orientation(*d.get("orientation", (1, 0, 0, 0))),
                scale=tuple(d.get("scale", (1, 1, 1))),
                asset_ref=str(d.get("asset_ref", "")),
                metadata={str(k): str(v) for k, v in d.get("metadata", {}).items()},
            )
        except (KeyError, ValueError, TypeError) as e:
            raise ProjectFormatError(f"bad item {d.get('id', '?')!r}: {e}") from e


@dataclass(frozen=True)
class ChangeEvent:
    revision: int
    item_id: str
    old: Optional[ContentItem]
    new: Optional[ContentItem]


class Project:
    """Mutable content registry for one AR experience.

    Every successful mutation bumps ``revision`` by exactly one and
    notifies subscribers in mutation order; failed mutations leave both
    state and revision untouched.
    """

    def __init__(self, name: str, anchor_origin: GeoPosition):
        self.name = name
        self.anchor_origin = anchor_origin
        self.anchor: FrameAnchor = make_anchor(anchor_origin)
        self.format_version = FORMAT_VERSION
        self.revision = 0
        self._items: dict[str, ContentItem] = {}
        self._subscribers: list[Callable[[ChangeEvent], None]] = []

    # -- queries ---------------------------------------------------------

    def get_item(self, item_id: str) -> ContentItem:
        try:
            return self._items[item_id]
        except KeyError:
            raise UnknownItemError(item_id) from None

    def list_items(self) -> list[ContentItem]:
        return list(self._items.values())

    def render_items(self) -> list[ContentItem]:
        """Items delivered to AR clients; fiducials never render."""
        return [i for i in self._items.values() if i.kind is not ContentKind.FIDUCIAL]

    def query_radius(self, center: GeoPosition, radius_m: float) -> list[ContentItem]:
        """Items whose horizontal distance from center is within radius_m."""
        anchor = make_anchor(center)
        out = []
        for item in self._items.values():
            p = geo_to_local(anchor, item.geo)
            if math.hypot(p.x_m, p.z_m) <= radius_m:
                out.append(item)
        return out

    def item_local_position(self, item: ContentItem) -> LocalPosition:
        return geo_to_local(self.anchor, item.geo)

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self) -> Iterator[ContentItem]:
        return iter(self._items.values())

    # -- mutations -------------------------------------------------------

    def subscribe(self, fn: Callable[[ChangeEvent], None]) -> None:
        self._subscribers.append(fn)

    def _commit(self, item_id: str, old, new) -> None:
        self.revision += 1
        event = ChangeEvent(self.revision, item_id, old, new)
        for fn in self._subscribers:
            fn(event)

    def add_item(self, item: ContentItem) -> str:
        if item.id in self._items:
            raise DuplicateItemError(item.id)
        self._items[item.id] = item
        self._commit(item.id, None, item)
        return item.id

    def new_item(self, kind: ContentKind, geo: GeoPosition, **kwargs) -> ContentItem:
        item = ContentItem(id=uuid.uuid4().hex, kind=kind, geo=geo, **kwargs)
        self.add_item(item)
        return item

    def update_item(self, item_id: str, **fields) -> ContentItem:
        old = self.get_item(item_id)
        if "id" in fields:
            raise RegistryError("item id is immutable")
        new = replace(old, **fields)  # validates scale etc. before commit
        self._items[item_id] = new
        self._commit(item_id, old, new)
        return new

    def remove_item(self, item_id: str) -> None:
        old = self.get_item(item_id)
        del self._items[item_id]
        self._commit(item_id, old, None)

    def clone_item(self, item_id: str, offset: LocalPosition) -> str:
        """Duplicate an item displaced by a local-frame offset."""
        src = self.get_item(item_id)
        new_geo = local_to_geo(self.anchor, geo_to_local(self.anchor, src.geo) + offset)
        clone = replace(src, id=uuid.uuid4().hex, geo=new_geo)
        return self.add_item(clone)

    # -- persistence -----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": self.format_version,
            "name": self.name,
            "origin": {
                "lat": self.anchor_origin.latitude_deg,
                "lon": self.anchor_origin.longitude_deg,
                "height": self.anchor_origin.height_m,
            },
            "items": [i.to_dict() for i in self._items.values()],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )

    @staticmethod
    def load(path: str | Path, strict: bool = False) -> "Project":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ProjectFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e
        return Project.from_dict(data, strict=strict)

    @staticmethod
    def from_dict(data: dict[str, Any], strict: bool = False) -> "Project":
        if not isinstance(data, dict):
            raise ProjectFormatError("project file must be a JSON object")
        version = data.get("format_version")
        if version != FORMAT_VERSION:
            raise ProjectFormatError(
                f"incompatible format_version {version!r}, expected {FORMAT_VERSION}"
            )
        known = {"format_version", "name", "origin", "items"}
        extra = set(data) - known
        if extra and strict:
            raise ProjectFormatError(f"unknown project fields: {sorted(extra)}")
        try:
            origin = data["origin"]
            anchor = GeoPosition(
                float(origin["lat"]), float(origin["lon"]), float(origin.get("height", 0.0))
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ProjectFormatError(f"bad origin: {e}") from e
        project = Project(str(data.get("name", "")), anchor)
        for entry in data.get("items", []):
            item = ContentItem.from_dict(entry, strict=strict)
            if item.id in project._items:
                raise ProjectFormatError(f"duplicate item id {item.id!r}")
            project._items[item.id] = item
        return project
