/**
 * Pure view-models for the two render surfaces: the top-down map and the
 * selected user's perspective panel.  app.ts only draws what these
 * return, so the geometry is testable without a canvas.
 */

import { type Anchor, geoToLocal, headingOf } from "./geo.js";
import type { UserFeedEntry } from "./protocol.js";
import { anchorOf, type ConsoleState, displayedGeo } from "./state.js";

export interface UserMarker {
	clientId: string;
	px: number;
	py: number;
	headingDeg: number;
	/** circle radius in pixels; equals reported accuracy at map scale */
	accuracyRadiusPx: number | null;
	/** frustum wedge half-angle (horizontal FOV / 2), degrees */
	wedgeHalfDeg: number;
	wedgeLengthPx: number;
	selected: boolean;
	activeMode: string;
}

export interface ItemPin {
	itemId: string;
	px: number;
	py: number;
	kind: string;
	selected: boolean;
	/** true while an optimistic move awaits server confirmation */
	pending: boolean;
}

export interface MapView {
	users: UserMarker[];
	items: ItemPin[];
}

const WEDGE_LENGTH_M = 20;

function toPx(
	state: ConsoleState,
	x: number,
	z: number,
	width: number,
	height: number,
): [number, number] {
	const { centerX, centerZ, metersPerPx } = state.viewport;
	// north (+z) is up on screen
	return [width / 2 + (x - centerX) / metersPerPx, height / 2 - (z - centerZ) / metersPerPx];
}

function horizontalFovDeg(entry: UserFeedEntry): number {
	const p = entry.profile;
	const aspect = p.camera_res_w_px / p.camera_res_h_px;
	const half = Math.atan(Math.tan((p.camera_vfov_deg * Math.PI) / 360) * aspect);
	return (half * 360) / Math.PI;
}

export function buildMapView(state: ConsoleState, width: number, height: number): MapView {
	const anchor = anchorOf(state);
	const users: UserMarker[] = [];
	for (const entry of Object.values(state.users)) {
		const [x, , z] = entry.pose.position;
		const [px, py] = toPx(state, x, z, width, height);
		users.push({
			clientId: entry.client_id,
			px,
			py,
			headingDeg: headingOf(entry.pose.orientation),
			accuracyRadiusPx:
				entry.horizontal_accuracy_m != null
					? entry.horizontal_accuracy_m / state.viewport.metersPerPx
					: null,
			wedgeHalfDeg: horizontalFovDeg(entry) / 2,
			wedgeLengthPx: WEDGE_LENGTH_M / state.viewport.metersPerPx,
			selected: entry.client_id === state.selectedUser,
			activeMode: entry.active_mode,
		});
	}
	const items: ItemPin[] = anchor ? buildItemPins(state, anchor, width, height) : [];
	return { users, items };
}

function buildItemPins(
	state: ConsoleState,
	anchor: Anchor,
	width: number,
	height: number,
): ItemPin[] {
	const pins: ItemPin[] = [];
	for (const item of Object.values(state.items)) {
		const geo = displayedGeo(state, item.id);
		if (!geo) continue;
		const local = geoToLocal(anchor, geo);
		const [px, py] = toPx(state, local.x, local.z, width, height);
		pins.push({
			itemId: item.id,
			px,
			py,
			kind: item.kind,
			selected: item.id === state.selectedItem,
			pending: item.id in state.pending,
		});
	}
	return pins;
}

/** Hit-test: nearest pin within `radiusPx` of the cursor, or null. */
export function pickItem(view: MapView, px: number, py: number, radiusPx = 12): string | null {
	let best: string | null = null;
	let bestDist = radiusPx;
	for (const pin of view.items) {
		const d = Math.hypot(pin.px - px, pin.py - py);
		if (d <= bestDist) {
			best = pin.itemId;
			bestDist = d;
		}
	}
	return best;
}

/** Map pixel coordinates back to local-frame meters (inverse of toPx). */
export function pxToLocal(
	state: ConsoleState,
	px: number,
	py: number,
	width: number,
	height: number,
): { x: number; z: number } {
	const { centerX, centerZ, metersPerPx } = state.viewport;
	return {
		x: centerX + (px - width / 2) * metersPerPx,
		z: centerZ - (py - height / 2) * metersPerPx,
	};
}

// -- perspective panel ---------------------------------------------------

export interface PanelBadge {
	text: string;
	color: "red" | "amber" | "green";
}

export interface PanelBox {
	itemId: string;
	/** normalized [u0, v0, u1, v1] in the device screen rectangle */
	bbox: [number, number, number, number];
	distanceM: number;
}

export interface PerspectivePanel {
	clientId: string;
	/** screen_w / screen_h of the selected device */
	aspect: number;
	boxes: PanelBox[];
	badges: PanelBadge[];
	verdict: string | null;
}

export function buildPerspectivePanel(state: ConsoleState): PerspectivePanel | null {
	const entry = state.selectedUser ? state.users[state.selectedUser] : undefined;
	if (!entry) return null;
	const badges: PanelBadge[] = [];
	const verdict = entry.divergence?.verdict ?? null;
	if (verdict === "RotationalMismatch" || verdict === "Both") {
		badges.push({ text: "possible magnetic interference", color: "red" });
	}
	if (verdict === "PositionalMismatch" || verdict === "Both") {
		badges.push({ text: "positional mismatch", color: "red" });
	}
	for (const issue of entry.issues ?? []) {
		badges.push({ text: issue.kind, color: "amber" });
	}
	if (badges.length === 0) badges.push({ text: "nominal", color: "green" });
	return {
		clientId: entry.client_id,
		aspect: entry.profile.screen_w_px / entry.profile.screen_h_px,
		boxes: (entry.visible ?? []).map((v) => ({
			itemId: v.item_id,
			bbox: v.screen_bbox,
			distanceM: v.distance_m,
		})),
		badges,
		verdict,
	};
}
