import init, { retrieve, simulate_pour, Bar } from "./pkg/barbot_web.js";

const $ = (id) => document.getElementById(id);

function search() {
  const hits = JSON.parse(retrieve($("query").value, 5));
  $("hits").tBodies[0].innerHTML = hits
    .map((h) => `<tr><td>${h.rank}</td><td>${h.name}</td><td>${h.score.toFixed(3)}</td></tr>`)
    .join("");
}

function plot(trace) {
  const c = $("plot");
  const g = c.getContext("2d");
  const pad = 30;
  const tMax = trace.t[trace.t.length - 1] || 1;
  const mMax = Math.max(trace.target_mass_g * 1.1, ...trace.measured_g);
  const x = (t) => pad + (t / tMax) * (c.width - 2 * pad);
  const y = (m) => c.height - pad - (m / mMax) * (c.height - 2 * pad);
  g.clearRect(0, 0, c.width, c.height);

  const band = trace.target_mass_g * trace.tolerance;
  g.fillStyle = "#e3f4ea";
  g.fillRect(pad, y(trace.target_mass_g + band), c.width - 2 * pad, y(trace.target_mass_g - band) - y(trace.target_mass_g + band));

  const line = (ys, color, width) => {
    g.strokeStyle = color;
    g.lineWidth = width;
    g.beginPath();
    ys.forEach((m, i) => (i ? g.lineTo(x(trace.t[i]), y(m)) : g.moveTo(x(trace.t[i]), y(m))));
    g.stroke();
  };
  line(trace.measured_g, "#c8c8c8", 1);
  line(trace.true_g, "#1b6ec2", 2);
  line(trace.filtered_g, "#e07b00", 1.5);

  g.fillStyle = "#444";
  g.fillText(`${mMax.toFixed(0)} g`, 2, pad);
  g.fillText(`${tMax.toFixed(1)} s`, c.width - pad - 20, c.height - 10);
  g.fillText("true", pad + 10, pad);
  g.fillText("filtered", pad + 50, pad);
  g.fillText("measured", pad + 110, pad);
}

function pour() {
  try {
    const trace = JSON.parse(
      simulate_pour(+$("target").value, +$("sigma").value, +$("latency").value, BigInt($("pour-seed").value || 0)),
    );
    const err = (100 * (trace.final_mass_g - trace.target_mass_g)) / trace.target_mass_g;
    $("pour-result").innerHTML =
      `final ${trace.final_mass_g.toFixed(2)} g (${err >= 0 ? "+" : ""}${err.toFixed(3)}%) after ${trace.duration_s.toFixed(1)} s ` +
      `<span class="${trace.within_tolerance ? "ok" : "bad"}">${trace.within_tolerance ? "within ±1%" : "outside ±1%"}</span>`;
    plot(trace);
  } catch (e) {
    $("pour-result").innerHTML = `<span class="bad">${e}</span>`;
  }
}

let bar;
let seed = 0;

function show(reply) {
  const { session, events } = JSON.parse(reply);
  $("state").textContent = `${session.session_id}: ${session.state}` + (session.failure ? ` (${session.failure})` : "");
  for (const ev of events) {
    const div = document.createElement("div");
    const { seq, kind, timestamp, ...rest } = ev;
    div.textContent = `${seq} ${kind} ${kind === "pour_telemetry" ? rest.telemetry.item_id : JSON.stringify(rest)}`;
    $("events").append(div);
  }
  $("events").scrollTop = $("events").scrollHeight;
  $("prompt").innerHTML = "";
  for (const p of session.prompts) {
    const text = document.createElement("p");
    text.textContent = p.text;
    $("prompt").append(text);
    for (const choice of p.options) {
      const b = document.createElement("button");
      b.textContent = choice;
      b.onclick = () => {
        $("prompt").querySelectorAll("button").forEach((x) => (x.disabled = true));
        try {
          show(bar.answer(p.anomaly_id, choice));
        } catch (e) {
          $("state").textContent = e;
        }
      };
      $("prompt").append(b);
    }
  }
}

function order() {
  $("events").innerHTML = "";
  show(bar.order($("order-text").value, BigInt(seed++)));
}

await init();
bar = new Bar();
$("query").oninput = search;
$("pour").onclick = pour;
$("order").onclick = order;
search();
pour();
