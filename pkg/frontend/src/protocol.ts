/**
 * Console side of the staging-server wire protocol.
 *
 * Messages are length-prefixed UTF-8 JSON text frames:
 *
 *     <byte length of json>\n{"t": "<tag>", "seq": <n>, "body": {...}}
 *
 * The JSON we emit is canonical (sorted keys, no whitespace, nulls
 * omitted) like the server's; unknown body fields are tolerated on
 * receive.  See docs/PROTOCOL.md for the field-by-field contract.
 */

export const PROTOCOL_MAJOR = 1;
export const PROTOCOL_MINOR = 0;

export interface GeoModel {
	lat: number;
	lon: number;
	height?: number;
}

export type Quat = [number, number, number, number];
export type Vec3 = [number, number, number];

export interface ItemModel {
	id: string;
	kind: string;
	lat: number;
	lon: number;
	height?: number;
	orientation?: Quat;
	scale?: Vec3;
	asset_ref?: string;
	metadata?: Record<string, string>;
}

export interface ProfileModel {
	model: string;
	os: string;
	screen_w_px: number;
	screen_h_px: number;
	camera_vfov_deg: number;
	camera_res_w_px: number;
	camera_res_h_px: number;
}

export interface PoseModel {
	position: Vec3;
	orientation: Quat;
}

export interface DivergenceModel {
	rotational_error_deg: number;
	positional_error_m: number;
	verdict: "Nominal" | "RotationalMismatch" | "PositionalMismatch" | "Both";
}

export interface IssueModel {
	kind: string;
	item_id?: string;
	other_item_id?: string;
	value?: number;
}

export interface VisibleItemModel {
	item_id: string;
	distance_m: number;
	angular_height_deg: number;
	screen_bbox: [number, number, number, number];
}

export interface UserFeedEntry {
	client_id: string;
	profile: ProfileModel;
	pose: PoseModel;
	horizontal_accuracy_m?: number;
	active_mode: string;
	blend_weight: number;
	avatar_mode?: string;
	render_fps?: number;
	tracking_fps?: number;
	battery_pct?: number;
	frustum_near_m?: number;
	frustum_far_m?: number;
	divergence?: DivergenceModel;
	issues?: IssueModel[];
	visible?: VisibleItemModel[];
	last_seen_ms?: number;
}

export interface ClientHello {
	client_id: string;
	profile: ProfileModel;
	protocol_major?: number;
	protocol_minor?: number;
	role?: "client" | "designer";
	auth_token?: string;
}

export interface ContentSnapshot {
	revision: number;
	items: ItemModel[];
	chunk_index?: number;
	chunk_count?: number;
	origin?: GeoModel;
}

export interface ContentDelta {
	revision: number;
	changed?: ItemModel[];
	removed?: string[];
}

export interface EditCommand {
	item_id: string;
	editor_id: string;
	geo?: GeoModel;
	orientation?: Quat;
	scale?: Vec3;
}

export interface MonitoringFrame {
	revision: number;
	tick: number;
	users: UserFeedEntry[];
}

export interface UserJoined {
	user: { client_id: string; model?: string; os?: string };
}

export interface UserLeft {
	client_id: string;
}

export interface Ack {
	ref_seq: number;
}

export interface ErrorMsg {
	code: string;
	detail?: string;
}

export type Envelope =
	| { t: "ClientHello"; seq: number; body: ClientHello }
	| { t: "ContentSnapshot"; seq: number; body: ContentSnapshot }
	| { t: "ContentDelta"; seq: number; body: ContentDelta }
	| { t: "EditCommand"; seq: number; body: EditCommand }
	| { t: "MonitoringFrame"; seq: number; body: MonitoringFrame }
	| { t: "UserJoined"; seq: number; body: UserJoined }
	| { t: "UserLeft"; seq: number; body: UserLeft }
	| { t: "Ack"; seq: number; body: Ack }
	| { t: "Error"; seq: number; body: ErrorMsg };

export class ProtocolError extends Error {}

const encoder = new TextEncoder();

/** JSON with recursively sorted keys and null/undefined fields dropped. */
export function canonicalJson(value: unknown): string {
	if (value === null || value === undefined) return "null";
	if (Array.isArray(value)) {
		return "[" + value.map((v) => canonicalJson(v ?? null)).join(",") + "]";
	}
	if (typeof value === "object") {
		const obj = value as Record<string, unknown>;
		const parts: string[] = [];
		for (const key of Object.keys(obj).sort()) {
			const v = obj[key];
			if (v === null || v === undefined) continue;
			parts.push(JSON.stringify(key) + ":" + canonicalJson(v));
		}
		return "{" + parts.join(",") + "}";
	}
	return JSON.stringify(value);
}

/** Wire text for one message; length prefix counts UTF-8 bytes. */
export function encode(envelope: Envelope): string {
	const payload = canonicalJson(envelope);
	return `${encoder.encode(payload).length}\n${payload}`;
}

/** Parse one wire frame; throws ProtocolError on malformation. */
export function decode(frame: string): Envelope {
	const nl = frame.indexOf("\n");
	if (nl < 0) throw new ProtocolError("missing length prefix");
	const declared = Number(frame.slice(0, nl));
	const payload = frame.slice(nl + 1);
	const actual = encoder.encode(payload).length;
	if (!Number.isInteger(declared) || declared !== actual) {
		throw new ProtocolError(`length prefix ${declared} != payload length ${actual}`);
	}
	let envelope: unknown;
	try {
		envelope = JSON.parse(payload);
	} catch (e) {
		throw new ProtocolError(`invalid JSON: ${e}`);
	}
	if (typeof envelope !== "object" || envelope === null) {
		throw new ProtocolError("envelope must be a JSON object");
	}
	const env = envelope as { t?: unknown; seq?: unknown; body?: unknown };
	if (typeof env.t !== "string") throw new ProtocolError("missing tag");
	if (typeof env.seq !== "number" || env.seq < 0) throw new ProtocolError("bad seq");
	if (typeof env.body !== "object" || env.body === null) {
		throw new ProtocolError("body must be a JSON object");
	}
	return env as Envelope;
}
