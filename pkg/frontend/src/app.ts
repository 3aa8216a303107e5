/**
 * Browser glue: one WebSocket, one reducer, two canvases.  All state
 * transitions happen in state.ts; this file only wires DOM events and
 * draws the view-models from map.ts.
 */

import {
	buildMapView,
	buildPerspectivePanel,
	type MapView,
	pickItem,
	pxToLocal,
} from "./map.js";
import { decode, encode, type Envelope, PROTOCOL_MAJOR, PROTOCOL_MINOR } from "./protocol.js";
import { type ConsoleState, dragDrop, initialState, reduce, selectUser } from "./state.js";

const CONSOLE_ID = `console-${Math.random().toString(36).slice(2, 8)}`;

const state: ConsoleState = initialState();
let seq = 0;
let socket: WebSocket | null = null;
let drag: { itemId: string; px: number; py: number } | null = null;

const mapCanvas = document.getElementById("map") as HTMLCanvasElement;
const panelCanvas = document.getElementById("panel") as HTMLCanvasElement;
const userList = document.getElementById("users") as HTMLUListElement;
const statusEl = document.getElementById("status") as HTMLSpanElement;
const toastsEl = document.getElementById("toasts") as HTMLDivElement;

function send(envelope: Envelope): void {
	if (socket && socket.readyState === WebSocket.OPEN) socket.send(encode(envelope));
}

function connect(): void {
	const proto = location.protocol === "https:" ? "wss" : "ws";
	socket = new WebSocket(`${proto}://${location.host}/ws`);
	socket.onopen = () => {
		state.connected = true;
		statusEl.textContent = "connected";
		seq += 1;
		send({
			t: "ClientHello",
			seq,
			body: {
				client_id: CONSOLE_ID,
				role: "designer",
				protocol_major: PROTOCOL_MAJOR,
				protocol_minor: PROTOCOL_MINOR,
				profile: {
					model: "DesignerConsole",
					os: "web",
					screen_w_px: Math.max(1, window.innerWidth),
					screen_h_px: Math.max(1, window.innerHeight),
					camera_vfov_deg: 60,
					camera_res_w_px: 1,
					camera_res_h_px: 1,
				},
			},
		});
	};
	socket.onmessage = (ev) => {
		try {
			reduce(state, decode(String(ev.data)));
		} catch (e) {
			console.warn("dropped frame:", e);
		}
		scheduleRender();
	};
	socket.onclose = () => {
		state.connected = false;
		statusEl.textContent = "disconnected - retrying";
		// state rebuilds from the next snapshot; just reconnect
		setTimeout(connect, 1000);
	};
}

let renderQueued = false;
function scheduleRender(): void {
	if (renderQueued) return;
	renderQueued = true;
	requestAnimationFrame(() => {
		renderQueued = false;
		render();
	});
}

function render(): void {
	const view = buildMapView(state, mapCanvas.width, mapCanvas.height);
	drawMap(view);
	drawPanel();
	drawUserList();
	drawToasts();
}

function drawMap(view: MapView): void {
	const ctx = mapCanvas.getContext("2d")!;
	ctx.clearRect(0, 0, mapCanvas.width, mapCanvas.height);
	for (const pin of view.items) {
		ctx.fillStyle = pin.pending ? "#c8a200" : pin.selected ? "#ff6b35" : "#3a7bd5";
		ctx.beginPath();
		ctx.arc(pin.px, pin.py, 6, 0, 2 * Math.PI);
		ctx.fill();
		ctx.fillStyle = "#ccc";
		ctx.font = "10px sans-serif";
		ctx.fillText(pin.itemId, pin.px + 8, pin.py - 8);
	}
	for (const user of view.users) {
		const rad = ((user.headingDeg - 90) * Math.PI) / 180; // screen: 0deg = up
		if (user.accuracyRadiusPx != null) {
			ctx.strokeStyle = "rgba(80,180,255,0.6)";
			ctx.beginPath();
			ctx.arc(user.px, user.py, user.accuracyRadiusPx, 0, 2 * Math.PI);
			ctx.stroke();
		}
		const half = (user.wedgeHalfDeg * Math.PI) / 180;
		ctx.fillStyle = "rgba(120,220,120,0.25)";
		ctx.beginPath();
		ctx.moveTo(user.px, user.py);
		ctx.arc(user.px, user.py, user.wedgeLengthPx, rad - half, rad + half);
		ctx.closePath();
		ctx.fill();
		ctx.fillStyle = user.selected ? "#ffdd57" : "#7be07b";
		ctx.beginPath();
		ctx.arc(user.px, user.py, 5, 0, 2 * Math.PI);
		ctx.fill();
		ctx.fillStyle = "#eee";
		ctx.font = "11px sans-serif";
		ctx.fillText(user.clientId, user.px + 8, user.py + 4);
	}
}

function drawPanel(): void {
	const ctx = panelCanvas.getContext("2d")!;
	ctx.clearRect(0, 0, panelCanvas.width, panelCanvas.height);
	const panel = buildPerspectivePanel(state);
	if (!panel) return;
	// device-aspect rectangle, letterboxed into the canvas
	let w = panelCanvas.width - 20;
	let h = w / panel.aspect;
	if (h > panelCanvas.height - 40) {
		h = panelCanvas.height - 40;
		w = h * panel.aspect;
	}
	const ox = (panelCanvas.width - w) / 2;
	const oy = 10;
	ctx.strokeStyle = "#888";
	ctx.strokeRect(ox, oy, w, h);
	for (const box of panel.boxes) {
		const [u0, v0, u1, v1] = box.bbox;
		ctx.strokeStyle = "#3a7bd5";
		ctx.strokeRect(ox + u0 * w, oy + v0 * h, (u1 - u0) * w, (v1 - v0) * h);
		ctx.fillStyle = "#aaa";
		ctx.font = "10px sans-serif";
		ctx.fillText(`${box.itemId} (${box.distanceM.toFixed(1)} m)`, ox + u0 * w, oy + v0 * h - 2);
	}
	let y = oy + h + 16;
	for (const badge of panel.badges) {
		ctx.fillStyle = badge.color === "red" ? "#e05050" : badge.color === "amber" ? "#c8a200" : "#50b050";
		ctx.fillText(badge.text, ox, y);
		y += 14;
	}
}

function drawUserList(): void {
	userList.innerHTML = "";
	for (const entry of Object.values(state.users)) {
		const li = document.createElement("li");
		li.textContent = `${entry.client_id} — ${entry.profile.model} (${entry.active_mode})`;
		li.className = entry.client_id === state.selectedUser ? "selected" : "";
		li.onclick = () => {
			selectUser(state, entry.client_id);
			scheduleRender();
		};
		userList.appendChild(li);
	}
}

function drawToasts(): void {
	// show the last three, newest first
	toastsEl.innerHTML = "";
	for (const text of state.toasts.slice(-3).reverse()) {
		const div = document.createElement("div");
		div.className = "toast";
		div.textContent = text;
		toastsEl.appendChild(div);
	}
}

mapCanvas.addEventListener("mousedown", (ev) => {
	const view = buildMapView(state, mapCanvas.width, mapCanvas.height);
	const hit = pickItem(view, ev.offsetX, ev.offsetY);
	if (hit) {
		drag = { itemId: hit, px: ev.offsetX, py: ev.offsetY };
		state.selectedItem = hit;
		scheduleRender();
	}
});

mapCanvas.addEventListener("mousemove", (ev) => {
	if (drag) {
		drag.px = ev.offsetX;
		drag.py = ev.offsetY;
	}
});

mapCanvas.addEventListener("mouseup", (ev) => {
	if (!drag) return;
	const { x, z } = pxToLocal(state, ev.offsetX, ev.offsetY, mapCanvas.width, mapCanvas.height);
	seq += 1;
	const cmd = dragDrop(state, drag.itemId, x, z, CONSOLE_ID, seq);
	if (cmd) send(cmd); // exactly one EditCommand per drop
	drag = null;
	scheduleRender();
});

mapCanvas.addEventListener("wheel", (ev) => {
	ev.preventDefault();
	const factor = ev.deltaY > 0 ? 1.2 : 1 / 1.2;
	state.viewport.metersPerPx = Math.min(20, Math.max(0.05, state.viewport.metersPerPx * factor));
	scheduleRender();
});

connect();
scheduleRender();
