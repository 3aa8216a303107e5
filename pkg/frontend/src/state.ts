/**
 * Console state and its reducer.
 *
 * All protocol handling funnels through `reduce`; the state is derived
 * solely from received messages, so a reconnect rebuilds it from one
 * snapshot plus subsequent deltas.  The only message the console ever
 * originates is an EditCommand (plus the initial hello), built by
 * `dragDrop` and handed back to the caller to send.
 */

import { type Anchor, type Geo, geoToLocal, localToGeo, makeAnchor } from "./geo.js";
import type {
	ContentDelta,
	ContentSnapshot,
	Envelope,
	ItemModel,
	UserFeedEntry,
} from "./protocol.js";

export interface Viewport {
	centerX: number; // local-frame meters, x = East
	centerZ: number; // local-frame meters, z = North
	metersPerPx: number;
}

export interface PendingEdit {
	geo: Geo; // optimistic position shown until the server confirms
	priorGeo: Geo; // revert target if the server rejects
}

export interface ConsoleState {
	connected: boolean;
	revision: number;
	tick: number;
	origin: Geo | null;
	items: Record<string, ItemModel>;
	users: Record<string, UserFeedEntry>;
	roster: Record<string, { model: string; os: string }>;
	selectedUser: string | null;
	selectedItem: string | null;
	viewport: Viewport;
	pending: Record<string, PendingEdit>;
	toasts: string[];
	// snapshot chunks buffered until every chunk_index has arrived
	chunks: Record<number, ContentSnapshot>;
}

export function initialState(): ConsoleState {
	return {
		connected: false,
		revision: 0,
		tick: 0,
		origin: null,
		items: {},
		users: {},
		roster: {},
		selectedUser: null,
		selectedItem: null,
		viewport: { centerX: 0, centerZ: 0, metersPerPx: 0.5 },
		pending: {},
		toasts: [],
		chunks: {},
	};
}

function applySnapshot(state: ConsoleState, snap: ContentSnapshot): void {
	const count = snap.chunk_count ?? 1;
	state.chunks[snap.chunk_index ?? 0] = snap;
	if (Object.keys(state.chunks).length < count) return;
	state.items = {};
	for (let i = 0; i < count; i++) {
		for (const item of state.chunks[i].items) state.items[item.id] = item;
	}
	state.revision = snap.revision;
	if (snap.origin) {
		state.origin = { lat: snap.origin.lat, lon: snap.origin.lon, height: snap.origin.height ?? 0 };
	}
	state.chunks = {};
	state.pending = {};
}

function applyDelta(state: ConsoleState, delta: ContentDelta): void {
	for (const item of delta.changed ?? []) {
		state.items[item.id] = item;
		// server confirmation reconciles any optimistic move of this item
		delete state.pending[item.id];
	}
	for (const id of delta.removed ?? []) {
		delete state.items[id];
		delete state.pending[id];
		if (state.selectedItem === id) state.selectedItem = null;
	}
	state.revision = delta.revision;
}

export function reduce(state: ConsoleState, msg: Envelope): ConsoleState {
	switch (msg.t) {
		case "ContentSnapshot":
			applySnapshot(state, msg.body);
			break;
		case "ContentDelta":
			applyDelta(state, msg.body);
			break;
		case "MonitoringFrame": {
			state.tick = msg.body.tick;
			state.revision = msg.body.revision;
			state.users = {};
			for (const entry of msg.body.users) state.users[entry.client_id] = entry;
			break;
		}
		case "UserJoined":
			state.roster[msg.body.user.client_id] = {
				model: msg.body.user.model ?? "",
				os: msg.body.user.os ?? "",
			};
			break;
		case "UserLeft":
			delete state.roster[msg.body.client_id];
			delete state.users[msg.body.client_id];
			if (state.selectedUser === msg.body.client_id) state.selectedUser = null;
			break;
		case "Error": {
			const pending = msg.body.detail ? state.pending[msg.body.detail] : undefined;
			if (msg.body.code === "UNKNOWN_ITEM" && pending && msg.body.detail) {
				// concurrent delete raced our edit: revert the optimistic move
				delete state.pending[msg.body.detail];
				state.toasts.push(`edit rejected: item ${msg.body.detail} no longer exists`);
			} else {
				state.toasts.push(`server error ${msg.body.code}: ${msg.body.detail ?? ""}`);
			}
			break;
		}
		default:
			break; // Ack and unknown tags carry no state
	}
	return state;
}

export function anchorOf(state: ConsoleState): Anchor | null {
	return state.origin ? makeAnchor(state.origin) : null;
}

/** Position an item is drawn at: optimistic override before server truth. */
export function displayedGeo(state: ConsoleState, itemId: string): Geo | null {
	const pending = state.pending[itemId];
	if (pending) return pending.geo;
	const item = state.items[itemId];
	if (!item) return null;
	return { lat: item.lat, lon: item.lon, height: item.height ?? 0 };
}

/**
 * Finish a drag: convert the drop point (local-frame meters, height kept)
 * to geodetic, record the optimistic move, and return the single
 * EditCommand envelope to send.  Returns null if the item is unknown or
 * no snapshot origin has arrived yet.
 */
export function dragDrop(
	state: ConsoleState,
	itemId: string,
	x: number,
	z: number,
	editorId: string,
	seq: number,
): Envelope | null {
	const anchor = anchorOf(state);
	const prior = displayedGeo(state, itemId);
	if (!anchor || !prior) return null;
	const y = geoToLocal(anchor, prior).y; // dragging moves in the ground plane only
	const geo = localToGeo(anchor, { x, y, z });
	state.pending[itemId] = { geo, priorGeo: state.pending[itemId]?.priorGeo ?? prior };
	return {
		t: "EditCommand",
		seq,
		body: {
			item_id: itemId,
			editor_id: editorId,
			geo: { lat: geo.lat, lon: geo.lon, height: geo.height },
		},
	};
}

/** Side-panel click: select the user and center the viewport on them. */
export function selectUser(state: ConsoleState, clientId: string): void {
	state.selectedUser = clientId;
	const entry = state.users[clientId];
	if (entry) {
		state.viewport.centerX = entry.pose.position[0];
		state.viewport.centerZ = entry.pose.position[2];
	}
}
