import { describe, expect, it } from "vitest";

import { buildMapView, buildPerspectivePanel, pickItem, pxToLocal } from "../src/map.js";
import type { Envelope, UserFeedEntry } from "../src/protocol.js";
import { initialState, reduce, selectUser } from "../src/state.js";

const ORIGIN = { lat: 41.8781, lon: -87.6298, height: 12.0 };

function entry(clientId: string, overrides: Partial<UserFeedEntry> = {}): UserFeedEntry {
	return {
		client_id: clientId,
		profile: {
			model: "TestPhone",
			os: "TestOS",
			screen_w_px: 1080,
			screen_h_px: 1920,
			camera_vfov_deg: 60,
			camera_res_w_px: 1920,
			camera_res_h_px: 1080,
		},
		pose: { position: [0, 1.6, 0], orientation: [1, 0, 0, 0] },
		horizontal_accuracy_m: 4.5,
		active_mode: "SensorBased",
		blend_weight: 1,
		...overrides,
	};
}

function frame(users: UserFeedEntry[]): Envelope {
	return { t: "MonitoringFrame", seq: 1, body: { revision: 1, tick: 1, users } };
}

function withUsers(...users: UserFeedEntry[]) {
	const state = initialState();
	reduce(state, {
		t: "ContentSnapshot",
		seq: 1,
		body: {
			revision: 1,
			items: [{ id: "q1", kind: "ImageQuad", ...ORIGIN, height: 12 }],
			origin: ORIGIN,
		},
	});
	reduce(state, frame(users));
	return state;
}

describe("map view", () => {
	it("accuracy circle radius equals reported accuracy at map scale", () => {
		const state = withUsers(entry("c1"));
		state.viewport.metersPerPx = 0.5;
		const view = buildMapView(state, 800, 600);
		expect(view.users[0].accuracyRadiusPx).toBeCloseTo(9, 9); // 4.5 m / 0.5 m-per-px
	});

	it("one marker per user; no users leaves content pins only", () => {
		const crowd = [entry("c1"), entry("c2"), entry("c3")];
		expect(buildMapView(withUsers(...crowd), 800, 600).users.length).toBe(3);
		const empty = buildMapView(withUsers(), 800, 600);
		expect(empty.users).toEqual([]);
		expect(empty.items.map((p) => p.itemId)).toEqual(["q1"]);
	});

	it("north is up: a user 10 m north draws above the viewport center", () => {
		const state = withUsers(entry("c1", { pose: { position: [0, 1.6, 10], orientation: [1, 0, 0, 0] } }));
		const view = buildMapView(state, 800, 600);
		expect(view.users[0].px).toBeCloseTo(400, 9);
		expect(view.users[0].py).toBeLessThan(300);
	});

	it("pxToLocal inverts the marker placement", () => {
		const state = withUsers(entry("c1"));
		state.viewport.centerX = 7;
		state.viewport.centerZ = -3;
		const { x, z } = pxToLocal(state, 500, 200, 800, 600);
		const view = buildMapView(
			withUsers(entry("c1", { pose: { position: [x, 1.6, z], orientation: [1, 0, 0, 0] } })),
			800,
			600,
		);
		// same viewport, same px back
		const s2 = withUsers(entry("c1", { pose: { position: [x, 1.6, z], orientation: [1, 0, 0, 0] } }));
		s2.viewport.centerX = 7;
		s2.viewport.centerZ = -3;
		const v2 = buildMapView(s2, 800, 600);
		expect(v2.users[0].px).toBeCloseTo(500, 6);
		expect(v2.users[0].py).toBeCloseTo(200, 6);
		void view;
	});

	it("pickItem hit-tests pins within the grab radius", () => {
		const state = withUsers();
		const view = buildMapView(state, 800, 600);
		const pin = view.items[0];
		expect(pickItem(view, pin.px + 5, pin.py - 5)).toBe("q1");
		expect(pickItem(view, pin.px + 50, pin.py)).toBeNull();
	});
});

describe("selection", () => {
	it("clicking a user row centers the viewport on that user", () => {
		const state = withUsers(entry("c1", { pose: { position: [42, 1.6, -17], orientation: [1, 0, 0, 0] } }));
		selectUser(state, "c1");
		expect(state.selectedUser).toBe("c1");
		expect(state.viewport.centerX).toBe(42);
		expect(state.viewport.centerZ).toBe(-17);
	});
});

describe("perspective panel", () => {
	it("panel aspect matches the device screen (9:16)", () => {
		const state = withUsers(entry("c1"));
		selectUser(state, "c1");
		expect(buildPerspectivePanel(state)!.aspect).toBeCloseTo(1080 / 1920, 12);
	});

	it("draws one bbox per visible item from the feed", () => {
		const state = withUsers(
			entry("c1", {
				visible: [
					{ item_id: "q1", distance_m: 10, angular_height_deg: 5.7, screen_bbox: [0.4, 0.45, 0.6, 0.55] },
				],
			}),
		);
		selectUser(state, "c1");
		const panel = buildPerspectivePanel(state)!;
		expect(panel.boxes.length).toBe(1);
		expect(panel.boxes[0].bbox).toEqual([0.4, 0.45, 0.6, 0.55]);
	});

	it("RotationalMismatch shows the red magnetic-interference badge", () => {
		const state = withUsers(
			entry("c1", {
				divergence: { rotational_error_deg: 12, positional_error_m: 0.1, verdict: "RotationalMismatch" },
			}),
		);
		selectUser(state, "c1");
		const badges = buildPerspectivePanel(state)!.badges;
		expect(badges).toContainEqual({ text: "possible magnetic interference", color: "red" });
	});

	it("no selection yields no panel; clean user shows nominal", () => {
		const state = withUsers(entry("c1"));
		expect(buildPerspectivePanel(state)).toBeNull();
		selectUser(state, "c1");
		expect(buildPerspectivePanel(state)!.badges).toEqual([{ text: "nominal", color: "green" }]);
	});
});
